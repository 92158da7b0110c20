use serde_json::json;
use std::path::Path;
use std::time::Instant;

use kldpg_core::corpus::{
    build_dataset, CorruptOp, Dataset, GenConfig, ProductionWeights, MANIFEST_FILE, TEST_FILE,
    TRAIN_FILE,
};
use kldpg_core::ebm::{Ebm, EbmError};
use kldpg_core::lang::{compile_check, parse};
use kldpg_core::metrics::{
    compilability_rate, error_histogram, evaluate as eval_metrics, summarize_histograms,
    EvalOptions, ForwardKl,
};
use kldpg_core::policy::{
    encode_checkpoint, load_checkpoint, perplexity_of, sample_many, train_base as mle, AdamConfig,
    MleConfig, MlpConfig,
};
use kldpg_core::rng::derive_seed;
use kldpg_core::tiny::TinyConfig;
use kldpg_core::tuning::{tune as run_tune, Method, Optimizer, TuneConfig};
use kldpg_core::{AnyPolicy, MiniLang, MlpPolicy, Policy, TabularPolicy, Vocab};

use crate::config::Settings;
use crate::manifest::{check_input, Artifact, OutputDir, RunManifest};
use crate::CliError;

pub struct Context {
    name: String,
    pub settings: Settings,
    pub out: OutputDir,
    pub seed: u64,
    inputs: Vec<Artifact>,
    started: Instant,
}

impl Context {
    pub fn new(
        name: &str,
        settings: Settings,
        out: &Path,
        force: bool,
    ) -> Result<Context, CliError> {
        let seed = settings.get("seed")?;
        Ok(Context {
            name: name.to_string(),
            settings,
            out: OutputDir::create(out, force)?,
            seed,
            inputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let artifact = check_input(path)?;
        self.inputs.push(artifact);
        Ok(())
    }

    pub fn finish(self, details: serde_json::Value) -> Result<(), CliError> {
        let manifest = RunManifest {
            subcommand: self.name,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.settings.as_map().clone(),
            inputs: self.inputs,
            artifacts: Vec::new(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            details,
        };
        self.out.finish(manifest)?;
        Ok(())
    }

    fn load_policy(&mut self, key: &str) -> Result<AnyPolicy, CliError> {
        let path = self.settings.path(key)?.to_path_buf();
        self.input(&path)?;
        Ok(load_checkpoint(&path)?)
    }

    fn load_data(&mut self, vocab: &Vocab) -> Result<Dataset, CliError> {
        let dir = self.settings.path("data")?.to_path_buf();
        self.input(&dir.join(MANIFEST_FILE))?;
        Ok(Dataset::load(&dir, vocab)?)
    }
}

fn gen_config(s: &Settings, seed: u64) -> Result<GenConfig, CliError> {
    let corrupt_ops = s
        .raw("corpus.corrupt_ops")
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            CorruptOp::parse(x).ok_or_else(|| CliError::Config(format!("unknown corruption {x:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GenConfig {
        seed,
        min_statements: s.get("corpus.min_statements")?,
        max_statements: s.get("corpus.max_statements")?,
        max_depth: s.get("corpus.max_depth")?,
        weights: ProductionWeights {
            factor_num: s.get("corpus.factor_num")?,
            factor_ident: s.get("corpus.factor_ident")?,
            factor_paren: s.get("corpus.factor_paren")?,
            expr_stop: s.get("corpus.expr_stop")?,
            expr_add: s.get("corpus.expr_add")?,
            expr_sub: s.get("corpus.expr_sub")?,
            term_stop: s.get("corpus.term_stop")?,
            term_mul: s.get("corpus.term_mul")?,
            term_div: s.get("corpus.term_div")?,
        },
        l_max: s.get("corpus.l_max")?,
        p_corrupt: s.get("corpus.p_corrupt")?,
        corrupt_ops,
        ..GenConfig::default()
    })
}

pub fn gen_corpus(mut ctx: Context) -> Result<(), CliError> {
    let vocab = Vocab::minilang();
    let config = gen_config(&ctx.settings, derive_seed(ctx.seed, "corpus"))?;
    let n_train = ctx.settings.get("corpus.n_train")?;
    let n_test = ctx.settings.get("corpus.n_test")?;
    let ds = build_dataset(&config, &vocab, n_train, n_test)?;
    ds.save(ctx.out.path(), &vocab)?;
    for f in [TRAIN_FILE, TEST_FILE, MANIFEST_FILE] {
        ctx.out.adopt(f)?;
    }
    let details = json!({
        "compilability_rate": ds.compilability_rate(&vocab),
        "attempts": ds.manifest.attempts,
        "digest": ds.manifest.digest,
    });
    ctx.finish(details)
}

fn mlp_config(s: &Settings) -> Result<MlpConfig, CliError> {
    Ok(MlpConfig {
        k: s.get("model.k")?,
        d: s.get("model.d")?,
        h: s.get("model.h")?,
    })
}

pub fn train_base(mut ctx: Context) -> Result<(), CliError> {
    let vocab = Vocab::minilang();
    let data = ctx.load_data(&vocab)?;
    let s = &ctx.settings;
    let init_seed = derive_seed(ctx.seed, "init");
    let mle_config = MleConfig {
        lr: s.get("train.lr")?,
        adam: AdamConfig::default(),
        batch_size: s.get("train.batch_size")?,
        epochs: s.get("train.epochs")?,
        seed: derive_seed(ctx.seed, "mle"),
    };
    let init = match s.raw("model.kind") {
        "mlp" => AnyPolicy::Mlp(MlpPolicy::new(vocab.clone(), mlp_config(s)?, init_seed)),
        "tabular" => {
            let k: usize = s.get("model.k")?;
            if !(2..=4).contains(&k) {
                return Err(CliError::Config("tabular model.k must be 2, 3 or 4".into()));
            }
            AnyPolicy::Tabular(TabularPolicy::uniform(vocab.clone(), k))
        }
        other => return Err(CliError::Config(format!("unknown model.kind {other:?}"))),
    };
    let (base, log) = mle(init, &data.train, &mle_config)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    ctx.out.write("train_log.csv", csv.as_bytes())?;
    ctx.out.write("base.ckpt", &encode_checkpoint(&base))?;

    let l_max = ctx.settings.get("eval.l_max")?;
    let n: usize = ctx.settings.get("eval.samples")?;
    let samples = sample_many(&base, derive_seed(ctx.seed, "check"), n.max(1), l_max, &[]);
    let details = json!({
        "parameters": base.num_params(),
        "compilability_rate": compilability_rate(&samples, &MiniLang::new(vocab)),
        "test_perplexity": perplexity_of(&base, &data.test)?,
        "final_loss": log.epoch_losses.last(),
    });
    ctx.finish(details)
}

fn tune_config(s: &Settings, seed: u64) -> Result<TuneConfig, CliError> {
    let method: Method = s.get("tune.method")?;
    let optimizer = match s.raw("tune.optimizer") {
        "adam" => Optimizer::Adam(AdamConfig::default()),
        "sgd" => Optimizer::Sgd,
        other => {
            return Err(CliError::Config(format!(
                "unknown tune.optimizer {other:?}"
            )))
        }
    };
    let config = TuneConfig {
        method,
        lr: s.get("tune.lr")?,
        batch_size: s.get("tune.batch_size")?,
        updates: s.get("tune.updates")?,
        warmup: s.get("tune.warmup")?,
        eval_interval: s.get("tune.eval_interval")?,
        eval_samples: s.get("tune.eval_samples")?,
        kl_samples: s.get("tune.kl_samples")?,
        seed,
        l_max: s.get("eval.l_max")?,
        optimizer,
        clip_norm: s.get("tune.clip_norm")?,
        baseline: s.get("tune.baseline")?,
        exact: s.get("tune.exact")?,
    };
    config.validate()?;
    Ok(config)
}

pub fn tune(mut ctx: Context) -> Result<(), CliError> {
    let config = tune_config(&ctx.settings, derive_seed(ctx.seed, "tune"))?;
    let base = ctx.load_policy("base")?;
    let vocab = base.vocab().clone();
    let data = ctx.load_data(&vocab)?;
    let scorer = MiniLang::new(vocab);
    let (policy, trace, failure) = match run_tune(&base, &scorer, &data.test, &config) {
        Ok((p, t)) => (p, t, None),
        Err(abort) => {
            let abort = *abort;
            let msg = format!("tuning aborted at update {}: {}", abort.update, abort.error);
            (abort.policy, abort.trace, Some(msg))
        }
    };
    ctx.out.write("trace.csv", trace.to_csv().as_bytes())?;
    ctx.out
        .write("updates.csv", trace.updates_csv().as_bytes())?;
    if let Some(last) = trace.evaluations.last() {
        ctx.out
            .write("histogram.csv", last.metrics.histogram_csv().as_bytes())?;
        ctx.out.write(
            "rank_frequency.csv",
            last.metrics.rank_frequency_csv().as_bytes(),
        )?;
    }
    ctx.out.write("policy.ckpt", &encode_checkpoint(&policy))?;
    let details = json!({
        "method": config.method,
        "tune_config": config,
        "swaps": trace.swaps,
        "clip_events": trace.clip_events,
        "evaluations": trace.evaluations.len(),
        "tuning_secs": trace.wall_clock_secs,
        "aborted": failure,
    });
    ctx.finish(details)?;
    match failure {
        Some(msg) => Err(CliError::Runtime(msg)),
        None => Ok(()),
    }
}

pub fn evaluate(mut ctx: Context) -> Result<(), CliError> {
    let base = ctx.load_policy("base")?;
    let policy = if ctx.settings.raw("policy").is_empty() {
        base.clone()
    } else {
        ctx.load_policy("policy")?
    };
    let vocab = base.vocab().clone();
    let test = if ctx.settings.raw("data").is_empty() {
        Vec::new()
    } else {
        ctx.load_data(&vocab)?.test
    };
    let s = &ctx.settings;
    let n: usize = s.get("eval.samples")?;
    let kl_n: usize = s.get("eval.kl_samples")?;
    let repeats: usize = s.get("eval.repeats")?;
    if n < 2 || repeats == 0 {
        return Err(CliError::Config(
            "eval.samples must be ≥ 2 and eval.repeats ≥ 1".into(),
        ));
    }
    let opts = EvalOptions {
        n_samples: n,
        l_max: s.get("eval.l_max")?,
        seed: derive_seed(ctx.seed, "evaluate"),
    };
    let scorer = MiniLang::new(vocab);
    let ebm = Ebm::new(&base, &scorer);
    let forward = ForwardKl::Proposal {
        q: &base,
        n: kl_n,
        z: None,
    };
    let record = eval_metrics(&policy, &ebm, &test, &opts, forward);

    let histograms: Vec<_> = (0..repeats)
        .map(|r| {
            let seed = derive_seed(ctx.seed, &format!("repeat-{r}"));
            error_histogram(&sample_many(&policy, seed, n, opts.l_max, &[]), &scorer)
        })
        .collect();
    let summary = summarize_histograms(&histograms);
    let mut hist = String::from("error_kind,mean,half_width");
    for r in 0..repeats {
        hist.push_str(&format!(",repeat_{r}"));
    }
    hist.push('\n');
    for k in kldpg_core::ErrorKind::ALL {
        let i = k.index();
        hist.push_str(&format!(
            "{k},{},{}",
            summary.mean[i], summary.half_width[i]
        ));
        for h in &histograms {
            hist.push_str(&format!(",{}", h.0[i]));
        }
        hist.push('\n');
    }
    hist.push_str(&format!(
        "total,{},{}",
        summary.total_mean, summary.total_half_width
    ));
    for h in &histograms {
        hist.push_str(&format!(",{}", h.total()));
    }
    hist.push('\n');

    let csv = format!(
        "{}\n{}\n",
        kldpg_core::metrics::CSV_HEADER,
        record.csv_row()
    );
    ctx.out.write("metrics.csv", csv.as_bytes())?;
    let json =
        serde_json::to_string_pretty(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.out.write("metrics.json", json.as_bytes())?;
    ctx.out.write("histogram.csv", hist.as_bytes())?;
    ctx.out
        .write("rank_frequency.csv", record.rank_frequency_csv().as_bytes())?;
    ctx.finish(json!({ "absent": record.absent }))
}

pub fn sample(mut ctx: Context) -> Result<(), CliError> {
    let key = if ctx.settings.raw("policy").is_empty() {
        "base"
    } else {
        "policy"
    };
    let policy = ctx.load_policy(key)?;
    let vocab = policy.vocab().clone();
    let prompt = vocab.tokenize_prefix(ctx.settings.raw("sample.prompt"))?;
    let n: usize = ctx.settings.get("sample.n")?;
    let l_max: usize = ctx.settings.get("eval.l_max")?;
    if prompt.len() + 1 >= l_max {
        return Err(CliError::Config(
            "prompt leaves no room below eval.l_max".into(),
        ));
    }
    let samples = sample_many(&policy, derive_seed(ctx.seed, "sample"), n, l_max, &prompt);

    let mut text = String::new();
    let mut table = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| CliError::Runtime(e.to_string());
    table
        .write_record([
            "index",
            "compiles",
            "error_kind",
            "char_length",
            "ast_nodes",
        ])
        .map_err(write_err)?;
    let mut compiled = 0;
    for (i, x) in samples.iter().enumerate() {
        let surface = vocab.detokenize(x);
        text.push_str(&surface);
        text.push('\n');
        let result = compile_check(&vocab, x);
        compiled += usize::from(result.ok());
        let nodes = parse(&vocab, x)
            .map(|a| a.node_count().to_string())
            .unwrap_or_default();
        table
            .write_record([
                i.to_string(),
                u8::from(result.ok()).to_string(),
                result
                    .error_kind()
                    .map(|k| k.to_string())
                    .unwrap_or_default(),
                surface.chars().count().to_string(),
                nodes,
            ])
            .map_err(write_err)?;
    }
    let table = table
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.out.write("samples.txt", text.as_bytes())?;
    ctx.out.write("samples.csv", &table)?;
    ctx.finish(json!({ "samples": n, "compilable": compiled }))
}

pub fn enumerate_exact(mut ctx: Context) -> Result<(), CliError> {
    let l_max: usize = ctx.settings.get("exact.l_max")?;
    let tiny;
    let base;
    let (a, vocab): (AnyPolicy, Vocab) = match ctx.settings.raw("exact.source") {
        "tiny" => {
            tiny = TinyConfig::new();
            (AnyPolicy::Tabular(tiny.a.clone()), tiny.vocab.clone())
        }
        "base" => {
            base = ctx.load_policy("base")?;
            let v = base.vocab().clone();
            (base, v)
        }
        other => return Err(CliError::Config(format!("unknown exact.source {other:?}"))),
    };
    let scorer = MiniLang::new(vocab.clone());
    let ebm = Ebm::new(&a, &scorer);
    let exact = ebm.exact_p(l_max).map_err(|e| match e {
        EbmError::BudgetExceeded { .. } => CliError::Config(format!("{e}; lower exact.l_max")),
        other => other.into(),
    })?;
    ctx.out
        .write("exact_p.csv", exact.to_csv(&vocab).as_bytes())?;
    ctx.out.write("base.ckpt", &encode_checkpoint(&a))?;
    let details = json!({
        "l_max": l_max,
        "z": exact.z,
        "support": exact.entries.len(),
        "total_probability": exact.total(),
        "kl_p_to_base": exact.kl_to(&a),
    });
    ctx.finish(details)
}
