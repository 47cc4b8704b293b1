//! Three-arm comparison: plain student (T-NLP), distillation alone into a
//! reduced student (KD-NLP), and the full student with the combined
//! objective (TKD-NLP).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::thread;

use crate::distill::{generate_soft_labels, SoftLabelStore};
use crate::error::{contract, Error, Result};
use crate::metrics::MetricsReport;
use crate::model::EncoderModel;
use crate::data::Dataset;
use crate::settings::{Arch, LoadedData, RunConfig, Settings};
use crate::train::{evaluate, train_classifier, train_student_distilled, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    TkdNlp,
    TNlp,
    KdNlp,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::TkdNlp, Arm::TNlp, Arm::KdNlp];

    pub fn uses_teacher(self) -> bool {
        self != Arm::TNlp
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::TkdNlp => "TKD-NLP",
            Arm::TNlp => "T-NLP",
            Arm::KdNlp => "KD-NLP",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TKD-NLP" => Ok(Arm::TkdNlp),
            "T-NLP" => Ok(Arm::TNlp),
            "KD-NLP" => Ok(Arm::KdNlp),
            other => Err(Error::Config(format!("unknown arm `{other}`"))),
        }
    }
}

/// Published full-scale figures, shown next to desk-scale results and never
/// compared against them.
pub struct PaperReference;

impl PaperReference {
    /// `(model, accuracy %, F1 %)`.
    pub const ROWS: [(&'static str, f64, f64); 6] = [
        ("TKD-NLP", 98.32, 97.14),
        ("RNN", 92.41, 95.31),
        ("LSTM", 93.31, 94.25),
        ("CNN", 96.58, 93.78),
        ("T-NLP", 94.48, 93.89),
        ("KD-NLP", 90.26, 92.14),
    ];

    pub fn get(model: &str) -> Option<(f64, f64)> {
        Self::ROWS.iter().find(|r| r.0 == model).map(|r| (r.1, r.2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub run: RunConfig,
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config("plan needs at least one arm".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("plan needs at least one seed".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        let mut arms = std::collections::BTreeSet::new();
        for a in &self.arms {
            if !arms.insert(a) {
                return Err(Error::Config(format!("arm {a} listed twice")));
            }
        }
        self.run.validate()
    }

    /// Run keys plus `arms` and `seeds`.
    pub fn from_settings(s: &mut Settings) -> Result<Self> {
        let arms = s.take_list("arms")?.unwrap_or_else(|| Arm::ALL.to_vec());
        let seeds = s.take_list("seeds")?.unwrap_or_else(|| (1..=7).collect());
        let run = RunConfig::from_settings(s)?;
        let plan = AblationPlan { arms, seeds, run };
        plan.validate()?;
        Ok(plan)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::parse(text)?;
        let plan = Self::from_settings(&mut s)?;
        s.finish()?;
        Ok(plan)
    }

    /// One encoder layer at half the student's width.
    pub fn reduced_student(&self) -> Arch {
        let s = self.run.student;
        let d_model = (s.d_model / 2).max(2) & !1;
        let num_heads = if d_model.is_multiple_of(s.num_heads) { s.num_heads } else { 1 };
        Arch {
            num_layers: 1,
            num_heads,
            d_model,
            d_ff: (s.d_ff / 2).max(1),
        }
    }

    fn arm_train(&self, arm: Arm, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed,
            ..self.run.train
        };
        cfg.distill = match arm {
            Arm::TNlp => None,
            Arm::TkdNlp => Some(self.run.distill),
            Arm::KdNlp => Some(crate::distill::DistillConfig {
                alpha: 1.0,
                ..self.run.distill
            }),
        };
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub report: MetricsReport,
    pub train_seconds: f64,
}

fn validation(data: &LoadedData) -> Result<&Dataset> {
    data.validation
        .as_ref()
        .ok_or_else(|| Error::Config("ablation needs a validation split".into()))
}

/// Trains the teacher for `seed` and labels the training split.
pub fn teacher_soft_labels(plan: &AblationPlan, data: &LoadedData, seed: u64) -> Result<SoftLabelStore> {
    let cfg = plan.run.teacher_config(data);
    let teacher_seed = seed.wrapping_add(0x0074_6561_6368_6572);
    let teacher = EncoderModel::new(cfg, teacher_seed)?;
    let tcfg = TrainConfig {
        seed: teacher_seed,
        distill: None,
        ..plan.run.train
    };
    let (teacher, _) = train_classifier(teacher, &data.train, None, &tcfg)?;
    generate_soft_labels(&teacher, &data.train, plan.run.distill.temperature)
}

/// Runs one arm given already generated soft labels (ignored by T-NLP).
pub fn run_arm_with(
    arm: Arm,
    plan: &AblationPlan,
    data: &LoadedData,
    seed: u64,
    soft_labels: Option<&SoftLabelStore>,
) -> Result<ArmResult> {
    let val = validation(data)?;
    let arch = if arm == Arm::KdNlp { plan.reduced_student() } else { plan.run.student };
    let config = arch.model_config(data.vocab_size, data.max_seq_len(), data.num_classes(), plan.run.layernorm_eps);
    let student = EncoderModel::new(config, seed)?;
    let cfg = plan.arm_train(arm, seed);
    let (model, report) = match arm {
        Arm::TNlp => train_classifier(student, &data.train, None, &cfg)?,
        _ => {
            let store = soft_labels.ok_or_else(|| Error::Contract(format!("{arm} needs teacher soft labels")))?;
            train_student_distilled(student, store, &data.train, None, &cfg, None)?
        }
    };
    Ok(ArmResult {
        arm,
        seed,
        report: evaluate(&model, val)?,
        train_seconds: report.seconds(),
    })
}

/// Loads the plan's data and runs one arm, training a teacher if the arm
/// needs one.
pub fn run_arm(arm: Arm, plan: &AblationPlan, seed: u64) -> Result<ArmResult> {
    plan.validate()?;
    let data = plan.run.data.load()?;
    let store = if arm.uses_teacher() {
        Some(teacher_soft_labels(plan, &data, seed)?)
    } else {
        None
    };
    run_arm_with(arm, plan, &data, seed, store.as_ref())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    pub median_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
    pub median_f1: f64,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub arms: Vec<Arm>,
    /// Arm-major, then seed order of the plan.
    pub results: Vec<ArmResult>,
}

impl AblationReport {
    pub fn for_arm(&self, arm: Arm) -> impl Iterator<Item = &ArmResult> {
        self.results.iter().filter(move |r| r.arm == arm)
    }

    pub fn summary(&self, arm: Arm) -> Option<ArmSummary> {
        let mut acc: Vec<f64> = self.for_arm(arm).map(|r| r.report.accuracy).collect();
        if acc.is_empty() {
            return None;
        }
        let mut f1: Vec<f64> = self.for_arm(arm).map(|r| r.report.f1()).collect();
        Some(ArmSummary {
            arm,
            median_acc: median(&mut acc),
            min_acc: acc[0],
            max_acc: acc[acc.len() - 1],
            median_f1: median(&mut f1),
        })
    }

    /// `arm,seed,acc,f1,train_seconds` rows, then the reference figures.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,seed,acc,f1,train_seconds\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                r.arm,
                r.seed,
                r.report.accuracy,
                r.report.f1(),
                r.train_seconds
            );
        }
        out.push_str("\npaper_reference\nmodel,acc,f1\n");
        for (m, a, f) in PaperReference::ROWS {
            let _ = writeln!(out, "{m},{a},{f}");
        }
        out
    }

    pub fn render_table(&self) -> String {
        let averaging = self.results.first().map(|r| r.report.f1_averaging()).unwrap_or("binary");
        let mut out = format!(
            "{:<8} {:>5} {:>10} {:>10} {:>10} {:>10}   {}\n",
            "arm",
            "runs",
            "acc (med)",
            "acc (min)",
            "acc (max)",
            format!("f1 {averaging}"),
            "paper (full-scale, not reproduced)"
        );
        for &arm in &self.arms {
            let Some(s) = self.summary(arm) else { continue };
            let paper = PaperReference::get(&arm.to_string())
                .map(|(a, f)| format!("acc {a:.2}  f1 {f:.2}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<8} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}   {}",
                arm.to_string(),
                self.for_arm(arm).count(),
                s.median_acc,
                s.min_acc,
                s.max_acc,
                s.median_f1,
                paper
            );
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("ablation.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join("ablation.txt");
        std::fs::write(&txt, self.render_table()).map_err(|e| Error::io(&txt, e))
    }
}

fn run_seed(plan: &AblationPlan, data: &LoadedData, seed: u64) -> Vec<Result<ArmResult>> {
    let store = if plan.arms.iter().any(|a| a.uses_teacher()) {
        match teacher_soft_labels(plan, data, seed) {
            Ok(s) => Some(s),
            Err(e) => {
                let msg = e.to_string();
                return plan
                    .arms
                    .iter()
                    .map(|_| Err(Error::Training(format!("teacher for seed {seed}: {msg}"))))
                    .collect();
            }
        }
    } else {
        None
    };
    plan.arms
        .iter()
        .map(|&arm| run_arm_with(arm, plan, data, seed, store.as_ref()))
        .collect()
}

/// Every arm for every seed. Seeds run on parallel threads, each with its
/// own teacher, models and RNG streams, so results do not depend on the
/// thread count. On failure the completed runs are saved to `partial_dir`
/// before the error is returned.
pub fn run_plan(plan: &AblationPlan, partial_dir: Option<&Path>) -> Result<AblationReport> {
    plan.validate()?;
    let data = plan.run.data.load()?;
    validation(&data)?;
    let threads = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut by_seed: BTreeMap<usize, Vec<Result<ArmResult>>> = BTreeMap::new();
    for chunk in plan.seeds.iter().enumerate().collect::<Vec<_>>().chunks(threads) {
        let data = &data;
        thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, &seed)| (i, s.spawn(move || run_seed(plan, data, seed))))
                .collect();
            for (i, h) in handles {
                let out = h.join().unwrap_or_else(|_| vec![Err(Error::Training("run panicked".into()))]);
                by_seed.insert(i, out);
            }
        });
    }
    let mut results = Vec::new();
    let mut first_err = None;
    for (a, _) in plan.arms.iter().enumerate() {
        for runs in by_seed.values() {
            match runs.get(a).or_else(|| runs.first()) {
                Some(Ok(r)) => results.push(r.clone()),
                Some(Err(e)) => {
                    first_err.get_or_insert_with(|| e.to_string());
                }
                None => {}
            }
        }
    }
    let report = AblationReport {
        arms: plan.arms.clone(),
        results,
    };
    if let Some(e) = first_err {
        if let Some(dir) = partial_dir {
            report.save(dir)?;
        }
        return Err(Error::Training(format!("ablation aborted: {e}")));
    }
    Ok(report)
}

/// Scores a file of `example_id,predicted_class` lines (an optional header
/// line is skipped) against `dataset`.
pub fn load_external_predictions(path: &Path, dataset: &Dataset) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut preds: BTreeMap<usize, usize> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
        let Some((id, class)) = parsed else {
            if n == 0 {
                continue;
            }
            return Err(Error::Format(format!("{}: line {}: expected `example_id,predicted_class`", path.display(), n + 1)));
        };
        contract!(preds.insert(id, class).is_none(), "prediction for example {id} given twice");
    }
    let missing: Vec<String> = dataset
        .examples()
        .iter()
        .filter(|e| !preds.contains_key(&e.example_id))
        .map(|e| e.example_id.to_string())
        .collect();
    contract!(missing.is_empty(), "no prediction for example id(s) {}", missing.join(", "));
    contract!(
        preds.len() == dataset.len(),
        "{} predictions for {} examples",
        preds.len(),
        dataset.len()
    );
    let predicted: Vec<usize> = dataset.examples().iter().map(|e| preds[&e.example_id]).collect();
    MetricsReport::from_predictions(&predicted, &dataset.labels(), dataset.num_classes())
}
