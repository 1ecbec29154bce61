use std::io::BufRead;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use turngate::cnn;
use turngate::corpus::{
    augment_with_errors, corpus_stats, load_corpus, save_corpus, split_train_test, AgentId,
    Inventory, Role,
};
use turngate::dsl;
use turngate::encoding::transitions_from_dialogue;
use turngate::eval::{
    eval_next_speaker, eval_scenario, mcnemar, ExpectedSource, Predictor, ReportFile,
};
use turngate::hub::{serve, HubConfig};
use turngate::hybrid::CascadeConfig;
use turngate::predictors::{load_table, mle_train, save_table};
use turngate::synth::{synth_corpus, SynthParams};

/// Turn-taking governance for multi-bot group chats: corpus tooling,
/// next-speaker predictors, the conversation-rules gate, evaluation and a
/// message hub.
#[derive(Parser)]
#[command(name = "turngate", version, max_term_width = 100)]
struct Cli {
    /// Seed for any randomized step of the command.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated multibotwoz-style corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6138)]
        dialogues: usize,
        #[arg(long, default_value_t = 99_553)]
        utterances: usize,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Positional train/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        ratio: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Inject distractor replies into every reply slot.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the windowed transition model.
    TrainMle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        window: usize,
    },
    /// Train the text classifier. The vocabulary covers both splits.
    TrainCnn {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        #[arg(long, default_value_t = 5)]
        batch_size: usize,
    },
    /// Score the repeat-last baseline on a clean test split.
    EvalBaseline {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score the transition model on a clean test split.
    EvalMle {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score the text classifier on a clean test split.
    EvalCnn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Replay an augmented test split through a ruleset's gate.
    EvalScenario {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Classifier model for the expected-replier cascade.
        #[arg(long, requires = "mle_table")]
        cnn_model: Option<PathBuf>,
        /// Transition table for the expected-replier cascade.
        #[arg(long, requires = "cnn_model")]
        mle_table: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        k1: f64,
        #[arg(long, default_value_t = 0.8)]
        k2: f64,
        #[arg(long, default_value = "travel_bot")]
        default_agent: String,
        #[arg(long, default_value_t = 2)]
        window: usize,
        /// Inject the genuine replier as the expectation (upper bound).
        #[arg(long, conflicts_with = "cnn_model")]
        oracle: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Exact McNemar test between two saved evaluation reports.
    Mcnemar {
        #[arg(long)]
        report_a: PathBuf,
        #[arg(long)]
        report_b: PathBuf,
    },
    /// Run the communication-hub service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// One-shot verdict for a transcript piped on stdin: every line but the
    /// last is an accepted message, the last line is the attempt.
    Gate {
        #[arg(long)]
        rules: PathBuf,
        /// Participants as name:role pairs; defaults to the standard
        /// seven-agent inventory.
        #[arg(long)]
        agents: Option<String>,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth {
            out,
            dialogues,
            utterances,
        } => {
            let params = SynthParams {
                dialogues,
                utterances,
                ..SynthParams::default()
            };
            let corpus = synth_corpus(&params, seed);
            save_corpus(&corpus, &out)?;
            println!(
                "wrote {} dialogues / {} utterances to {}",
                corpus.dialogues.len(),
                corpus.utterance_count(),
                out.display()
            );
        }
        Command::Stats { input, json } => {
            let corpus = load_corpus(&input)?;
            let stats = corpus_stats(&corpus);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{stats}");
            }
        }
        Command::Split {
            input,
            ratio,
            train_out,
            test_out,
        } => {
            let corpus = load_corpus(&input)?;
            let (train, test) = split_train_test(&corpus, ratio)?;
            save_corpus(&train, &train_out)?;
            save_corpus(&test, &test_out)?;
            println!(
                "split {} dialogues into {} train / {} test",
                corpus.dialogues.len(),
                train.dialogues.len(),
                test.dialogues.len()
            );
        }
        Command::Augment { input, out } => {
            let corpus = load_corpus(&input)?;
            let augmented = augment_with_errors(&corpus, seed)?;
            save_corpus(&augmented, &out)?;
            println!(
                "augmented {} -> {} utterances",
                corpus.utterance_count(),
                augmented.utterance_count()
            );
        }
        Command::TrainMle { input, out, window } => {
            let corpus = load_corpus(&input)?;
            let mut events = Vec::new();
            for d in &corpus.dialogues {
                events.extend(transitions_from_dialogue(d, window, &corpus.inventory)?);
            }
            let table = mle_train(&events, &corpus.inventory)?;
            save_table(&table, &corpus.inventory, &out)?;
            println!(
                "trained on {} transitions over {} states -> {}",
                table.total_events(),
                table.state_count(),
                out.display()
            );
        }
        Command::TrainCnn {
            train,
            test,
            out,
            epochs,
            learning_rate,
            batch_size,
        } => {
            let train_corpus = load_corpus(&train)?;
            let test_corpus = load_corpus(&test)?;
            let mut texts = cnn::instance_texts(&train_corpus);
            texts.extend(cnn::instance_texts(&test_corpus));
            let vocab = cnn::Vocabulary::build(texts.iter().map(|s| s.as_str()));
            let cfg = cnn::ModelConfig::default();
            let data = cnn::training_instances(
                &train_corpus,
                &vocab,
                &train_corpus.inventory,
                cfg.max_len,
            );
            let model = cnn::CnnModel::new(cfg, vocab.len(), train_corpus.n(), seed);
            let train_cfg = cnn::TrainConfig {
                epochs,
                learning_rate,
                batch_size,
                seed,
                ..cnn::TrainConfig::default()
            };
            let t0 = std::time::Instant::now();
            let model = cnn::train(model, &train_cfg, &data)?;
            let classes: Vec<AgentId> = train_corpus.inventory.names().cloned().collect();
            cnn::save_model(&model, &vocab, &classes, &out)?;
            println!(
                "trained {} instances x {} epochs in {:.1?} -> {}",
                data.len(),
                epochs,
                t0.elapsed(),
                out.display()
            );
        }
        Command::EvalBaseline { test, report } => {
            let corpus = load_corpus(&test)?;
            let result = eval_next_speaker(&Predictor::RepeatLast, &corpus)?;
            print_row("Baseline", result.accuracy, result.total);
            write_report(report, "baseline", &result, None, "repeat-last")?;
        }
        Command::EvalMle {
            table,
            test,
            window,
            report,
        } => {
            let corpus = load_corpus(&test)?;
            let table = load_table(&table, &corpus.inventory)?;
            let result = eval_next_speaker(
                &Predictor::Mle {
                    table: &table,
                    window,
                },
                &corpus,
            )?;
            print_row("A-MLE", result.accuracy, result.total);
            write_report(report, "a-mle", &result, None, &format!("mle-w{window}"))?;
        }
        Command::EvalCnn {
            model,
            test,
            report,
        } => {
            let corpus = load_corpus(&test)?;
            let (model, vocab, classes) = cnn::load_model(&model)?;
            cnn::verify_classes(&classes, &corpus.inventory)?;
            let result = eval_next_speaker(
                &Predictor::Cnn {
                    model: &model,
                    vocab: &vocab,
                },
                &corpus,
            )?;
            print_row("AC-CNN", result.accuracy, result.total);
            write_report(report, "ac-cnn", &result, None, "cnn")?;
        }
        Command::EvalScenario {
            rules,
            test,
            cnn_model,
            mle_table,
            k1,
            k2,
            default_agent,
            window,
            oracle,
            report,
        } => {
            let corpus = load_corpus(&test)?;
            let ruleset = dsl::parse_ruleset(
                &std::fs::read_to_string(&rules)
                    .with_context(|| format!("reading {}", rules.display()))?,
            )?;
            let loaded;
            let source = if oracle {
                ExpectedSource::Oracle
            } else if let (Some(cnn_path), Some(table_path)) = (&cnn_model, &mle_table) {
                let (model, vocab, classes) = cnn::load_model(cnn_path)?;
                cnn::verify_classes(&classes, &corpus.inventory)?;
                let table = load_table(table_path, &corpus.inventory)?;
                loaded = (model, vocab, table);
                ExpectedSource::Cascade {
                    cnn: &loaded.0,
                    vocab: &loaded.1,
                    table: &loaded.2,
                    window,
                    config: CascadeConfig::new(k1, k2, default_agent.as_str()),
                }
            } else {
                ExpectedSource::None
            };
            let result = eval_scenario(&ruleset, &source, &corpus, seed)?;
            let name = match &source {
                ExpectedSource::None => "Scenario A".to_string(),
                ExpectedSource::Oracle => "Scenario oracle".to_string(),
                ExpectedSource::Cascade { .. } => format!("Scenario B{:02.0}", k1 * 100.0),
            };
            print_row(&name, result.accuracy, result.total);
            println!(
                "  F1 (allow positive) {:.4}   macro F1 {:.4}",
                result.f1_binary_allow.unwrap_or(0.0),
                result.f1_macro.unwrap_or(0.0)
            );
            let config = format!(
                "rules={} k1={k1} k2={k2} default={default_agent}",
                rules.display()
            );
            write_report(report, &name, &result, Some(seed), &config)?;
        }
        Command::Mcnemar { report_a, report_b } => {
            let a = ReportFile::load(&report_a)?;
            let b = ReportFile::load(&report_b)?;
            let p = mcnemar(&a.correctness(), &b.correctness())?;
            println!("{} vs {}: p = {p:.6e}", a.kind, b.kind);
        }
        Command::Serve { config } => {
            let config = HubConfig::load(&config)?;
            let server = serve(config)?;
            println!("listening on {}", server.addr);
            // serve until the process is killed
            loop {
                std::thread::park();
            }
        }
        Command::Gate { rules, agents } => {
            let ruleset = dsl::parse_ruleset(
                &std::fs::read_to_string(&rules)
                    .with_context(|| format!("reading {}", rules.display()))?,
            )?;
            let inventory = parse_agents(agents.as_deref())?;
            let stdin = std::io::stdin();
            let lines: Vec<String> = stdin
                .lock()
                .lines()
                .collect::<std::io::Result<_>>()
                .context("reading transcript from stdin")?;
            let lines: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
            if lines.is_empty() {
                bail!("empty transcript on stdin");
            }
            #[derive(serde::Deserialize)]
            struct Line {
                sender: String,
                text: String,
                #[serde(default)]
                expected: Option<String>,
            }
            let parse_line = |raw: &str| -> anyhow::Result<(Line, AgentId, Role)> {
                let line: Line = serde_json::from_str(raw)?;
                let sender = AgentId::from(line.sender.as_str());
                let role = inventory
                    .role_of(&sender)
                    .ok_or_else(|| anyhow::anyhow!("unknown sender {sender}"))?;
                Ok((line, sender, role))
            };
            let mut state = dsl::reset_conversation(&ruleset, &inventory);
            for raw in &lines[..lines.len() - 1] {
                let (line, sender, role) = parse_line(raw)?;
                let event = dsl::Event {
                    sender,
                    role,
                    mentions: turngate::corpus::extract_mentions(&line.text, &inventory),
                    expected: line.expected.map(|e| AgentId::from(e.as_str())),
                };
                state = dsl::apply_event(&state, &ruleset, &event)?;
            }
            let (line, sender, role) = parse_line(lines[lines.len() - 1])?;
            let attempt = dsl::Attempt {
                sender,
                role,
                mentions: turngate::corpus::extract_mentions(&line.text, &inventory),
            };
            let decision = dsl::gate(&state, &ruleset, &attempt)?;
            println!("{}", serde_json::to_string(&decision)?);
        }
    }
    Ok(())
}

fn print_row(name: &str, accuracy: f64, total: usize) {
    println!("{name:<14} {accuracy:.4}   ({total} instances)");
}

fn write_report(
    path: Option<PathBuf>,
    kind: &str,
    result: &turngate::eval::EvalReport,
    seed: Option<u64>,
    config: &str,
) -> anyhow::Result<()> {
    if let Some(path) = path {
        ReportFile::new(kind, result, seed, config).save(&path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn parse_agents(spec: Option<&str>) -> anyhow::Result<Inventory> {
    let agents = match spec {
        None => {
            let mut v = vec![(AgentId::from("user"), Role::User)];
            v.extend(
                turngate::synth::BOTS
                    .iter()
                    .map(|b| (AgentId::from(*b), Role::Bot)),
            );
            v
        }
        Some(s) => s
            .split(',')
            .map(|pair| {
                let (name, role) = pair
                    .split_once(':')
                    .ok_or_else(|| anyhow::anyhow!("agent spec must be name:role, got {pair}"))?;
                let role = match role.trim() {
                    "user" => Role::User,
                    "bot" => Role::Bot,
                    other => bail!("unknown role {other}"),
                };
                Ok((AgentId::from(name.trim()), role))
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    Ok(Inventory::new(agents)?)
}
