//! Pipeline driver: gen-data → train-flow → train-classifier → attack/eval,
//! plus sampling and image dumps. Every stage reads and writes the shared
//! output directory, so stages compose through the filesystem.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flowadv_core::attack::{evaluate, AttackKind, EvalConfig};
use flowadv_core::classifier::{train_classifier, ClassifierConfig, TrainMode};
use flowadv_core::data::{gen_shapes, load_cache, save_cache, split, Dataset};
use flowadv_core::flow::model::FlowModel;
use flowadv_core::flow::train::{sample, train_flow};
use flowadv_core::harness::{
    build_report, dump_images, emit_report, load_classifier, load_flow, pgm_bytes,
    save_classifier, save_flow, RunConfig,
};
use flowadv_core::numerics::Prng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "flowadv", version, about = "Normalizing-flow black-box adversarial attack toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (key = value sections); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for the whole stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; overrides io.out_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write train/test caches.
    GenData,
    /// Train the flow on the cached train split and checkpoint it.
    TrainFlow,
    /// Train the classifier on the cached train split and checkpoint it.
    TrainClassifier {
        /// PGD adversarial training instead of plain cross-entropy.
        #[arg(long)]
        defended: bool,
    },
    /// Attack a single test image and dump clean/adversarial/perturbation PGMs.
    Attack {
        #[arg(long, value_parser = AttackKind::parse, default_value = "flow")]
        attack: AttackKind,
        /// Ball radius; overrides the config.
        #[arg(long)]
        eps: Option<f32>,
        /// Test-set index to attack.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Attack the PGD-adversarially-trained classifier checkpoint.
        #[arg(long)]
        defended: bool,
    },
    /// Run the full evaluation protocol and emit the JSON + CSV report.
    Eval {
        #[arg(long, value_parser = AttackKind::parse, default_value = "flow")]
        attack: AttackKind,
        #[arg(long)]
        eps: Option<f32>,
        /// Cap on evaluated examples (0 = all eligible).
        #[arg(long, default_value_t = 100)]
        limit: usize,
        /// Defended profile: adversarially-trained classifier and, for NES,
        /// the defended hyperparameters (sigma 0.001, 100 samples).
        #[arg(long)]
        defended: bool,
    },
    /// Draw samples from the trained flow as PGM images.
    Sample {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f32,
    },
    /// Attack the first eligible test images and dump PGM triples for each.
    DumpImages {
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        defended: bool,
    },
}

fn load_run_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.io.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.io.out_dir)
}

fn train_cache(dir: &Path) -> PathBuf {
    dir.join("dataset_train.nfds")
}

fn test_cache(dir: &Path) -> PathBuf {
    dir.join("dataset_test.nfds")
}

fn flow_ckpt(dir: &Path) -> PathBuf {
    dir.join("flow.nfck")
}

fn classifier_ckpt(dir: &Path, defended: bool) -> PathBuf {
    dir.join(if defended { "classifier_adv.nfck" } else { "classifier.nfck" })
}

fn load_split(dir: &Path) -> anyhow::Result<(Dataset, Dataset)> {
    let train = load_cache(&train_cache(dir)).context("loading train cache (run gen-data first)")?;
    let test = load_cache(&test_cache(dir)).context("loading test cache (run gen-data first)")?;
    Ok((train, test))
}

fn load_models(
    dir: &Path,
    defended: bool,
) -> anyhow::Result<(FlowModel, flowadv_core::classifier::ClassifierModel)> {
    let (flow, _) = load_flow(&flow_ckpt(dir)).context("loading flow checkpoint (run train-flow first)")?;
    let (clf, _) = load_classifier(&classifier_ckpt(dir, defended))
        .context("loading classifier checkpoint (run train-classifier first)")?;
    Ok((flow, clf))
}

fn classifier_config(cfg: &RunConfig, test: &Dataset, seed: u64) -> ClassifierConfig {
    ClassifierConfig {
        input_dim: test.image_dim(),
        classes: test.classes(),
        seed,
        ..cfg.classifier.clone()
    }
}

fn eval_config(cfg: &RunConfig, kind: AttackKind, seed: u64, eps: Option<f32>, limit: usize, defended: bool) -> EvalConfig {
    let mut ec = EvalConfig::new(kind, seed);
    ec.attack = cfg.attack.flow;
    ec.nes = if defended {
        flowadv_core::attack::NesConfig {
            eps: cfg.attack.nes.eps,
            budget: cfg.attack.nes.budget,
            ..flowadv_core::attack::NesConfig::defended()
        }
    } else {
        cfg.attack.nes
    };
    ec.pgd_steps = cfg.attack.pgd_steps;
    ec.limit = limit;
    if let Some(eps) = eps {
        ec.attack.eps = eps;
        ec.nes.eps = eps;
    }
    ec
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_run_config(&cli.common)?;
    let seed = cli.common.seed;
    let dir = out_dir(&cfg);

    match cli.command {
        Command::GenData => {
            let data = gen_shapes(cfg.data.n, cfg.data.classes, cfg.data.size, cfg.data.noise_std, seed)?;
            let (train, test) = split(&data, cfg.data.train_fraction, seed)?;
            save_cache(&train, &train_cache(&dir))?;
            save_cache(&test, &test_cache(&dir))?;
            println!(
                "wrote {} train / {} test images ({} classes, {}x{}) to {}",
                train.len(),
                test.len(),
                cfg.data.classes,
                cfg.data.size,
                cfg.data.size,
                dir.display()
            );
        }
        Command::TrainFlow => {
            let (train, _) = load_split(&dir)?;
            let tcfg = cfg.flow.train_config(seed);
            let path = flow_ckpt(&dir);
            // Checkpoint every epoch so a later divergence still leaves the
            // last good model on disk.
            let result = train_flow(&train, &tcfg, |model, epoch, nll| {
                println!("epoch {epoch}: train nll {nll:.4} nats");
                save_flow(model, &tcfg.flow, &path)
            })?;
            let last = result.epoch_nll.last().copied().unwrap_or(f32::NAN);
            println!(
                "flow trained for {} epochs, final nll {last:.4} nats -> {}",
                result.epoch_nll.len(),
                path.display()
            );
        }
        Command::TrainClassifier { defended } => {
            let (train, test) = load_split(&dir)?;
            let ccfg = classifier_config(&cfg, &test, seed);
            let mode = if defended {
                TrainMode::PgdAdversarial {
                    eps: cfg.attack.flow.eps,
                    steps: 7,
                }
            } else {
                TrainMode::Vanilla
            };
            let trained = train_classifier(&train, &ccfg, mode)?;
            let acc = trained.model.accuracy(&test)?;
            let path = classifier_ckpt(&dir, defended);
            save_classifier(&trained.model, &ccfg, &path)?;
            println!(
                "classifier{} trained, test accuracy {:.2}% -> {}",
                if defended { " (pgd-adversarial)" } else { "" },
                100.0 * acc,
                path.display()
            );
        }
        Command::Attack { attack, eps, index, defended } => {
            let (_, test) = load_split(&dir)?;
            if index >= test.len() {
                bail!("index {index} out of range for {} test images", test.len());
            }
            let (flow, clf) = load_models(&dir, defended)?;
            let ec = eval_config(&cfg, attack, seed, eps, 0, defended);
            let x = test.image(index);
            let y = test.label(index) as usize;
            if clf.predict(x)? != y {
                bail!("test image {index} is already misclassified; pick another index");
            }
            let res = flowadv_core::attack::evaluate::attack_single(x, y, &flow, &clf, &ec, index)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
            if let Some(adv) = &res.adversarial {
                let (_, h, w) = test.image_shape();
                let prefix = dir.join(format!("attack_{attack}_{index}"));
                dump_images(x, adv, w, h, &prefix)?;
                println!("images -> {}_{{clean,adv,perturbation}}.pgm", prefix.display());
            }
        }
        Command::Eval { attack, eps, limit, defended } => {
            let (_, test) = load_split(&dir)?;
            let (flow, clf) = load_models(&dir, defended)?;
            let ec = eval_config(&cfg, attack, seed, eps, limit, defended);
            let evaluation = evaluate(&test, &flow, &clf, &ec)?;
            let report = build_report(&evaluation, attack, seed, &cfg)?;
            let stem = dir.join(format!(
                "report_{attack}{}",
                if defended { "_defended" } else { "" }
            ));
            emit_report(&report, &stem)?;
            let agg = &report.aggregates;
            println!(
                "{attack}: success {}% ({}/{} eligible), avg queries {:?}, median {:?} -> {}.json",
                agg.success_rate_percent,
                agg.successes,
                agg.evaluated,
                agg.avg_queries,
                agg.median_queries,
                stem.display()
            );
        }
        Command::Sample { count, temperature } => {
            let (flow, _) = load_flow(&flow_ckpt(&dir)).context("loading flow checkpoint")?;
            let mut prng = Prng::derived(seed, 0x5A3B);
            let images = sample(&flow, count, temperature, &mut prng)?;
            for (i, img) in images.iter().enumerate() {
                let s = img.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let path = dir.join(format!("sample_{i:03}.pgm"));
                flowadv_core::harness::atomic_write(&path, &pgm_bytes(img.data(), w, h)?)?;
            }
            println!("wrote {count} samples (temperature {temperature}) to {}", dir.display());
        }
        Command::DumpImages { count, defended } => {
            let (_, test) = load_split(&dir)?;
            let (flow, clf) = load_models(&dir, defended)?;
            let ec = eval_config(&cfg, AttackKind::Flow, seed, None, 0, defended);
            let (_, h, w) = test.image_shape();
            let mut dumped = 0usize;
            for i in 0..test.len() {
                if dumped == count {
                    break;
                }
                let x = test.image(i);
                let y = test.label(i) as usize;
                if clf.predict(x)? != y {
                    continue;
                }
                let res = flowadv_core::attack::evaluate::attack_single(x, y, &flow, &clf, &ec, i)?;
                if let Some(adv) = &res.adversarial {
                    dump_images(x, adv, w, h, &dir.join(format!("example_{i:03}")))?;
                    dumped += 1;
                }
            }
            println!("dumped {dumped} adversarial image triples to {}", dir.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
