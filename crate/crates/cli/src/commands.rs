use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use tkd::ablation::{load_external_predictions, run_plan, AblationPlan};
use tkd::distill::{generate_soft_labels, SoftLabelStore};
use tkd::gradcheck::model_gradcheck;
use tkd::model::checkpoint;
use tkd::model::{EncoderModel, ModelConfig};
use tkd::settings::{LoadedData, RunConfig, Settings};
use tkd::train::{evaluate as evaluate_model, pretrain_mlm, train_classifier, train_student_distilled, TrainReport};

use crate::Common;

const GRADCHECK_LIMIT: f64 = 1e-3;

fn settings(common: &Common, base: Option<&Path>) -> Result<Settings> {
    let mut s = match base.or(common.config.as_deref()) {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(d) = &common.data {
        s.set("data", d.clone());
    }
    if let Some(v) = common.seed {
        s.set("seed", v.to_string());
    }
    if let Some(v) = common.alpha {
        s.set("alpha", v.to_string());
    }
    if let Some(v) = common.temperature {
        s.set("temperature", v.to_string());
    }
    if let Some(v) = common.epochs {
        s.set("epochs", v.to_string());
    }
    if let Some(v) = common.batch_size {
        s.set("batch_size", v.to_string());
    }
    Ok(s)
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut s = settings(common, None)?;
    let cfg = RunConfig::from_settings(&mut s)?;
    s.finish()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, content: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn load_model(path: &Path, expected: &ModelConfig, role: &str) -> Result<EncoderModel> {
    let model = checkpoint::load(path)?;
    if model.config() != expected {
        bail!(
            "{role} checkpoint {} has config {:?}, the run config implies {:?}",
            path.display(),
            model.config(),
            expected
        );
    }
    Ok(model)
}

fn print_training(report: &TrainReport) {
    if let Some(e) = report.last() {
        println!(
            "epoch {}: train loss {:.6}, train acc {:.4}, {:.1}s total",
            e.epoch,
            e.train_loss,
            e.train_acc,
            report.seconds()
        );
    }
    if let Some(v) = &report.final_validation {
        print!("{}", v.render_table());
    }
}

pub fn pretrain(common: &Common, arch: &str) -> Result<ExitCode> {
    let cfg = run_config(common)?;
    let data = cfg.data.load()?;
    let mc = if arch == "student" {
        cfg.student_config(&data)
    } else {
        cfg.teacher_config(&data)
    };
    let model = EncoderModel::new(mc, cfg.train.seed)?;
    let (model, losses) = pretrain_mlm(model, &data.train, &cfg.train, cfg.mask_fraction)?;
    let out = out_dir(common)?;
    checkpoint::save(&model, &out.join("checkpoint.tkd"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    write(out, "pretrain.csv", csv)?;
    write(out, "resolved.cfg", cfg.render())?;
    match (losses.first(), losses.last()) {
        (Some(a), Some(b)) => println!("masked-LM loss {a:.4} -> {b:.4} over {} steps", losses.len()),
        _ => println!("no positions masked; model unchanged"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train_teacher(common: &Common, init: Option<&Path>) -> Result<ExitCode> {
    let cfg = run_config(common)?;
    let data = cfg.data.load()?;
    let mc = cfg.teacher_config(&data);
    let model = match init {
        Some(p) => load_model(p, &mc, "initial")?,
        None => EncoderModel::new(mc, cfg.train.seed)?,
    };
    let (model, report) = train_classifier(model, &data.train, data.validation.as_ref(), &cfg.train)?;
    save_run(common, &cfg, &model, &report)?;
    print_training(&report);
    Ok(ExitCode::SUCCESS)
}

fn save_run(common: &Common, cfg: &RunConfig, model: &EncoderModel, report: &TrainReport) -> Result<()> {
    let out = out_dir(common)?;
    checkpoint::save(model, &out.join("checkpoint.tkd"))?;
    write(out, "report.csv", report.to_csv())?;
    write(out, "resolved.cfg", cfg.render())
}

pub fn make_softlabels(common: &Common, teacher_path: &Path) -> Result<ExitCode> {
    let cfg = run_config(common)?;
    let data = cfg.data.load()?;
    let teacher = checkpoint::load(teacher_path)?;
    let store = generate_soft_labels(&teacher, &data.train, cfg.distill.temperature)?;
    let out = out_dir(common)?;
    store.save(&out.join("softlabels.txt"))?;
    write(out, "resolved.cfg", cfg.render())?;
    println!(
        "{} soft labels at T={} from teacher {}",
        store.len(),
        store.temperature(),
        store.teacher()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn distill(common: &Common, softlabels: &Path, teacher: Option<&Path>, init: Option<&Path>) -> Result<ExitCode> {
    let cfg = run_config(common)?;
    let data = cfg.data.load()?;
    let store = SoftLabelStore::load(softlabels)?;
    store
        .check_covers(&data.train)
        .with_context(|| format!("soft labels {} do not match the training data", softlabels.display()))?;
    if store.temperature() != cfg.distill.temperature {
        bail!(
            "soft labels were generated at T={}, but the run uses T={}",
            store.temperature(),
            cfg.distill.temperature
        );
    }
    let teacher = match teacher {
        Some(p) => {
            let t = checkpoint::load(p)?;
            let sum = checkpoint::checksum(&t);
            if sum != store.teacher() {
                bail!("teacher {} has checksum {sum}, soft labels came from {}", p.display(), store.teacher());
            }
            Some(t)
        }
        None => None,
    };
    let mc = cfg.student_config(&data);
    let student = match init {
        Some(p) => load_model(p, &mc, "initial")?,
        None => EncoderModel::new(mc, cfg.train.seed)?,
    };
    let (model, report) = train_student_distilled(
        student,
        &store,
        &data.train,
        data.validation.as_ref(),
        &cfg.distill_train(),
        teacher.as_ref(),
    )?;
    save_run(common, &cfg, &model, &report)?;
    print_training(&report);
    Ok(ExitCode::SUCCESS)
}

fn split<'a>(data: &'a LoadedData, name: &str) -> Result<&'a tkd::data::Dataset> {
    match name {
        "train" => Ok(&data.train),
        _ => match &data.validation {
            Some(v) => Ok(v),
            None => Err(tkd::Error::Config("no validation split configured (set `validation`)".into()).into()),
        },
    }
}

pub fn evaluate(common: &Common, checkpoint_path: Option<&Path>, predictions: Option<&Path>, split_name: &str) -> Result<ExitCode> {
    let cfg = run_config(common)?;
    let data = cfg.data.load()?;
    let dataset = split(&data, split_name)?;
    let report = match (checkpoint_path, predictions) {
        (_, Some(p)) => load_external_predictions(p, dataset)?,
        (Some(c), None) => evaluate_model(&checkpoint::load(c)?, dataset)?,
        (None, None) => return Err(tkd::Error::Config("give a checkpoint or --predictions".into()).into()),
    };
    let out = out_dir(common)?;
    write(out, "metrics.csv", report.to_csv())?;
    write(out, "metrics.txt", report.render_table())?;
    write(out, "resolved.cfg", cfg.render())?;
    print!("{}", report.render_table());
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(common: &Common, plan_path: &Path) -> Result<ExitCode> {
    if common.config.is_some() {
        return Err(tkd::Error::Config("ablate reads its settings from the plan file; drop --config".into()).into());
    }
    let mut s = settings(common, Some(plan_path))?;
    let plan = AblationPlan::from_settings(&mut s)?;
    s.finish()?;
    let out = out_dir(common)?;
    let mut resolved = format!(
        "arms = {}\nseeds = {}\n",
        plan.arms.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "),
        plan.seeds.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
    );
    resolved.push_str(&plan.run.render());
    write(out, "resolved.cfg", resolved)?;
    let report = run_plan(&plan, Some(out))?;
    report.save(out)?;
    print!("{}", report.render_table());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(common: &Common) -> Result<ExitCode> {
    let mut s = settings(common, None)?;
    let config = ModelConfig {
        num_layers: s.take_or("num_layers", 2)?,
        num_heads: s.take_or("num_heads", 2)?,
        d_model: s.take_or("d_model", 8)?,
        d_ff: s.take_or("d_ff", 16)?,
        vocab_size: s.take_or("vocab_size", 12)?,
        max_seq_len: s.take_or("seq_len", 6)?,
        num_classes: s.take_or("num_classes", 3)?,
        layernorm_eps: s.take_or("layernorm_eps", 1e-5)?,
    };
    let batch: usize = s.take_or("batch", 4)?;
    let h: f64 = s.take_or("h", 1e-4)?;
    let seed: u64 = s.take_or("seed", 0)?;
    s.finish()?;
    config.validate()?;
    let err = model_gradcheck(&config, batch, seed, h)?;
    let out = out_dir(common)?;
    let c = &config;
    let resolved = format!(
        "num_layers = {}\nnum_heads = {}\nd_model = {}\nd_ff = {}\nvocab_size = {}\nseq_len = {}\nnum_classes = {}\nlayernorm_eps = {}\nbatch = {batch}\nh = {h}\nseed = {seed}\n",
        c.num_layers, c.num_heads, c.d_model, c.d_ff, c.vocab_size, c.max_seq_len, c.num_classes, c.layernorm_eps
    );
    write(out, "resolved.cfg", resolved)?;
    let line = format!("max relative error: {err:e}");
    write(out, "gradcheck.txt", format!("{line}\n"))?;
    println!("{line}");
    if err < GRADCHECK_LIMIT {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed (limit {GRADCHECK_LIMIT:e})");
        Ok(ExitCode::from(1))
    }
}
