use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
data = synth:keyword
n_train = 96
n_val = 32
vocab_size = 20
seq_len = 8
num_layers = 1
num_heads = 2
d_model = 8
d_ff = 16
teacher_num_layers = 1
teacher_num_heads = 2
teacher_d_model = 16
teacher_d_ff = 16
batch_size = 32
epochs = 2
seed = 3
";

fn tkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tkd")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}\n{}", o.status.code(), String::from_utf8_lossy(&o.stdout), stderr(&o));
    o
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Work { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.s("tiny.cfg");
        let out = self.s(out);
        let mut args = vec![cmd];
        args.extend_from_slice(extra);
        args.extend(["--config", cfg.as_str(), "--out", out.as_str()]);
        tkd(&args)
    }
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn csv_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .to_string()
}

#[test]
fn missing_data_key_exits_2_and_names_it() {
    let w = Work::new();
    fs::write(w.path("empty.cfg"), "epochs = 1\n").unwrap();
    let o = tkd(&["train-teacher", "--config", &w.s("empty.cfg"), "--out", &w.s("o")]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("data"), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn unknown_key_exits_2() {
    let w = Work::new();
    fs::write(w.path("bad.cfg"), format!("{TINY}learning_rat = 0.1\n")).unwrap();
    let o = tkd(&["train-teacher", "--config", &w.s("bad.cfg"), "--out", &w.s("o")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));
}

#[test]
fn train_teacher_writes_three_files_and_is_deterministic() {
    let w = Work::new();
    ok(w.run("train-teacher", "t", &[]));
    assert_eq!(listing(&w.path("t")), ["checkpoint.tkd", "report.csv", "resolved.cfg"]);
    let first = fs::read(w.path("t/checkpoint.tkd")).unwrap();
    ok(w.run("train-teacher", "t", &[]));
    assert_eq!(fs::read(w.path("t/checkpoint.tkd")).unwrap(), first);
    let resolved = fs::read_to_string(w.path("t/resolved.cfg")).unwrap();
    assert!(resolved.contains("alpha = 0.5"), "{resolved}");
    assert!(resolved.contains("temperature = 1"), "{resolved}");
}

#[test]
fn flags_override_config_keys() {
    let w = Work::new();
    ok(w.run("train-teacher", "t", &["--epochs", "1", "--seed", "9"]));
    let resolved = fs::read_to_string(w.path("t/resolved.cfg")).unwrap();
    assert!(resolved.contains("epochs = 1\n") && resolved.contains("seed = 9\n"), "{resolved}");
    let report = fs::read_to_string(w.path("t/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn pipeline_end_to_end() {
    let w = Work::new();
    ok(w.run("pretrain", "pre", &["--arch", "teacher"]));
    assert!(w.path("pre/checkpoint.tkd").exists());
    ok(w.run("train-teacher", "teacher", &["--init", &w.s("pre/checkpoint.tkd")]));
    let teacher = w.s("teacher/checkpoint.tkd");

    ok(w.run("make-softlabels", "soft", &[&teacher]));
    let text = fs::read_to_string(w.path("soft/softlabels.txt")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("n=96") && header.contains("T=1.0"), "{header}");
    assert_eq!(text.lines().count(), 97);
    let store = tkd::distill::SoftLabelStore::from_text(&text).unwrap();
    assert_eq!(store.to_text(), text);

    let soft = w.s("soft/softlabels.txt");
    ok(w.run("distill", "student", &[&soft, "--teacher", &teacher]));
    assert_eq!(listing(&w.path("student")), ["checkpoint.tkd", "report.csv", "resolved.cfg"]);

    ok(w.run("evaluate", "eval", &[&w.s("student/checkpoint.tkd")]));
    let metrics = fs::read_to_string(w.path("eval/metrics.csv")).unwrap();
    let report = fs::read_to_string(w.path("student/report.csv")).unwrap();
    let last: Vec<&str> = report.lines().last().unwrap().split(',').collect();
    assert_eq!(csv_value(&metrics, "accuracy"), last[3]);
    assert_eq!(csv_value(&metrics, "f1"), last[4]);
    assert!(fs::read_to_string(w.path("eval/metrics.txt")).unwrap().contains("TP="));
}

#[test]
fn distill_refuses_mismatched_soft_labels() {
    let w = Work::new();
    ok(w.run("train-teacher", "teacher", &[]));
    let teacher = w.s("teacher/checkpoint.tkd");
    ok(w.run("make-softlabels", "soft", &[&teacher]));
    let soft = w.s("soft/softlabels.txt");

    let o = w.run("distill", "s1", &[&soft, "--temperature", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("T=1"), "{}", stderr(&o));

    fs::write(w.path("other.cfg"), TINY.replace("seq_len = 8", "seq_len = 8\ndata_seed = 5")).unwrap();
    let o = tkd(&["distill", &soft, "--config", &w.s("other.cfg"), "--out", &w.s("s2")]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("do not match"), "{}", stderr(&o));

    ok(w.run("train-teacher", "teacher2", &["--seed", "4"]));
    let o = w.run("distill", "s3", &[&soft, "--teacher", &w.s("teacher2/checkpoint.tkd")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn evaluate_scores_external_predictions() {
    let w = Work::new();
    ok(w.run("train-teacher", "t", &["--epochs", "1"]));
    ok(w.run("evaluate", "e", &[&w.s("t/checkpoint.tkd")]));
    let lines: Vec<String> = (0..32).map(|i| format!("{i},0")).collect();
    fs::write(w.path("preds.csv"), format!("example_id,predicted_class\n{}\n", lines.join("\n"))).unwrap();
    ok(w.run("evaluate", "p", &["--predictions", &w.s("preds.csv")]));
    let metrics = fs::read_to_string(w.path("p/metrics.csv")).unwrap();
    assert_eq!(csv_value(&metrics, "accuracy"), "0.5");
    fs::write(w.path("short.csv"), "0,1\n").unwrap();
    let o = w.run("evaluate", "q", &["--predictions", &w.s("short.csv")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("31"));
}

#[test]
fn gradcheck_passes_with_defaults() {
    let w = Work::new();
    let o = ok(tkd(&["gradcheck", "--out", &w.s("g")]));
    let line = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(line.contains("max relative error"), "{line}");
    assert_eq!(listing(&w.path("g")), ["gradcheck.txt", "resolved.cfg"]);
}

#[test]
fn shipped_ablation_plan_runs_one_epoch() {
    let w = Work::new();
    let plan = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ablation.plan");
    let out = w.s("abl");
    let o = ok(tkd(&["ablate", plan, "--epochs", "1", "--out", &out]));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    for arm in ["TKD-NLP", "T-NLP", "KD-NLP", "paper (full-scale, not reproduced)"] {
        assert!(table.contains(arm), "{table}");
    }
    let csv = fs::read_to_string(w.path("abl/ablation.csv")).unwrap();
    assert!(csv.lines().filter(|l| l.contains("NLP,")).count() >= 21, "{csv}");
    assert!(fs::read_to_string(w.path("abl/resolved.cfg")).unwrap().contains("epochs = 1\n"));
    let o = tkd(&["ablate", plan, "--config", plan, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_presets_parse() {
    for name in ["desk.cfg", "paper.cfg"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let cfg = tkd::settings::RunConfig::parse(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(cfg.distill.alpha, 0.5);
        assert_eq!(cfg.distill.temperature, 1.0);
        assert_eq!(cfg.train.epochs, 10);
    }
}
