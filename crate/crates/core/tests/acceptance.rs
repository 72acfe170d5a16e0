//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vulnprompt_core::corpus::{split, synthetic::synthetic_corpus, undersample};
use vulnprompt_core::evalharness::{
    cv, fpr, mcc, precision_recall_f1, prepare, run_pipeline_with, write_prompt_dump,
    ConfusionCounts, MetricsError, MetricsReport, RunConfig, SamplePrompt,
};
use vulnprompt_core::llmclient::{LlmClient, LlmConfig};
use vulnprompt_core::modelplug::{train_builtin, BuiltinHyperparams};
use vulnprompt_core::promptgen::{check_sections, render_baseline, BaselineKind, BaselinePrompt, ICL_MARKER};
use vulnprompt_core::simindex::{estimate_jaccard, minhash, tokenize, LshIndex, LshParams, TokenShingleSet};
use vulnprompt_core::staticscan::{
    map_to_taxonomy, parse_cppcheck, parse_flawfinder, top_k, ScanMapping, StaticFinding, Tool,
};
use vulnprompt_core::taxonomy::{default_library, StepKind};
use vulnprompt_core::{Corpus, FunctionRecord, Label};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

// Oracle for the metric suite: expand counts into per-sample 0/1 vectors and
// evaluate each metric by direct counting, with MCC as the Pearson
// correlation of the two vectors.
struct Expanded {
    predicted: Vec<f64>,
    actual: Vec<f64>,
}

fn expand(c: &ConfusionCounts) -> Expanded {
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for (n, p, a) in [(c.tp, 1.0, 1.0), (c.fp, 1.0, 0.0), (c.tn, 0.0, 0.0), (c.fn_, 0.0, 1.0)] {
        for _ in 0..n {
            predicted.push(p);
            actual.push(a);
        }
    }
    Expanded { predicted, actual }
}

fn count_where(e: &Expanded, f: impl Fn(f64, f64) -> bool) -> f64 {
    e.predicted
        .iter()
        .zip(&e.actual)
        .filter(|(p, a)| f(**p, **a))
        .count() as f64
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn oracle(c: &ConfusionCounts) -> [f64; 5] {
    let e = expand(c);
    let hit = count_where(&e, |p, a| p == 1.0 && a == 1.0);
    let flagged = count_where(&e, |p, _| p == 1.0);
    let positives = count_where(&e, |_, a| a == 1.0);
    let false_alarms = count_where(&e, |p, a| p == 1.0 && a == 0.0);
    let negatives = count_where(&e, |_, a| a == 0.0);
    let precision = safe_div(hit, flagged);
    let recall = safe_div(hit, positives);
    let f1 = safe_div(2.0 * hit, flagged + positives);
    let fpr = safe_div(false_alarms, negatives);
    let n = e.predicted.len() as f64;
    let pearson = if n == 0.0 {
        0.0
    } else {
        let mp = e.predicted.iter().sum::<f64>() / n;
        let ma = e.actual.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vp = 0.0;
        let mut va = 0.0;
        for (p, a) in e.predicted.iter().zip(&e.actual) {
            cov += (p - mp) * (a - ma);
            vp += (p - mp) * (p - mp);
            va += (a - ma) * (a - ma);
        }
        safe_div(cov, (vp * va).sqrt())
    };
    [precision, recall, f1, fpr, pearson]
}

fn metric_oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let c = ConfusionCounts {
            tp: rng.gen_range(0..60),
            fp: rng.gen_range(0..60),
            tn: rng.gen_range(0..60),
            fn_: rng.gen_range(0..60),
        };
        let (p, r, f) = precision_recall_f1(&c);
        let got = [p, r, f, fpr(&c), mcc(&c)];
        let want = oracle(&c);
        for (name, (g, w)) in ["precision", "recall", "f1", "fpr", "mcc"].iter().zip(got.iter().zip(want)) {
            let diff = (g - w).abs();
            worst = worst.max(diff);
            ensure!(diff <= 1e-12, "matrix {i} {c:?}: {name} {g} vs oracle {w}");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 matrices, max |diff| {worst:.1e}, {elapsed:.2?}"))
}

fn mcc_anchors() -> Outcome {
    let perfect = mcc(&ConfusionCounts { tp: 5, fp: 0, tn: 5, fn_: 0 });
    ensure!(perfect == 1.0, "perfect gave {perfect}");
    let balanced = mcc(&ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
    ensure!(balanced == 0.0, "balanced gave {balanced}");
    let c = ConfusionCounts { tp: 3, fp: 1, tn: 4, fn_: 2 };
    let value = mcc(&c);
    let direct = (3.0 * 4.0 - 1.0 * 2.0) / ((4.0f64) * 5.0 * 5.0 * 6.0).sqrt();
    ensure!((value - 0.4082).abs() <= 1e-4, "{{3,1,2,4}} gave {value}");
    ensure!((value - direct).abs() <= 1e-12, "{value} vs direct {direct}");
    Ok(format!("1.0, 0.0, {value:.4}"))
}

fn cv_anchors() -> Outcome {
    let flat = cv(&[2.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    ensure!(flat == 0.0, "[2,2,2] gave {flat}");
    let spread = cv(&[0.0, 1.0]).map_err(|e| e.to_string())?;
    ensure!((spread - 1.0).abs() <= 1e-12, "[0,1] gave {spread}");
    ensure!(cv(&[0.0, 0.0]) == Err(MetricsError::ZeroMean), "mean-zero input did not error");
    Ok("0, 1.0, mean-zero rejected".into())
}

const VOCAB: &[&str] = &[
    "int", "char", "if", "(", ")", "{", "}", ";", "=", "+", "-", "*", "[", "]", "buf", "len", "i",
    "n", "p", "q", "return", "while", "for", "<", ">", "0", "1", "16", "memcpy", "strlen", "ptr",
    "size", "ctx", "->", "free", "malloc", "NULL", "==", "!=", ",",
];

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| VOCAB.choose(rng).expect("vocab").to_string())
        .collect()
}

fn exact_jaccard(a: &str, b: &str, k: usize) -> f64 {
    let shingles = |s: &str| -> HashSet<Vec<String>> {
        let toks: Vec<String> = tokenize(s).into_iter().map(str::to_owned).collect();
        if toks.len() < k {
            return std::iter::once(toks).filter(|t| !t.is_empty()).collect();
        }
        toks.windows(k).map(|w| w.to_vec()).collect()
    };
    let (sa, sb) = (shingles(a), shingles(b));
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

fn minhash_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let k = LshParams::default().shingle;
    let mut within = 0;
    let mut jaccards = Vec::new();
    for _ in 0..100 {
        let len = rng.gen_range(60..200);
        let base = random_tokens(&mut rng, len);
        let mut other = base.clone();
        let edit_rate = rng.gen_range(0.0..0.6);
        for tok in other.iter_mut() {
            if rng.gen_bool(edit_rate) {
                *tok = VOCAB.choose(&mut rng).expect("vocab").to_string();
            }
        }
        let (a, b) = (base.join(" "), other.join(" "));
        let exact = exact_jaccard(&a, &b, k);
        let sa = minhash(&TokenShingleSet::from_source(&a, k), 256, 11).map_err(|e| e.to_string())?;
        let sb = minhash(&TokenShingleSet::from_source(&b, k), 256, 11).map_err(|e| e.to_string())?;
        let est = estimate_jaccard(&sa, &sb).map_err(|e| e.to_string())?;
        if (est - exact).abs() <= 0.1 {
            within += 1;
        }
        jaccards.push(exact);
    }
    let elapsed = start.elapsed();
    ensure!(within >= 95, "only {within}/100 pairs within 0.1");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    let lo = jaccards.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = jaccards.iter().cloned().fold(0.0, f64::max);
    Ok(format!("{within}/100 within 0.1 (exact J from {lo:.2} to {hi:.2}), {elapsed:.2?}"))
}

fn lsh_self_retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut queries = 0;
    for corpus_no in 0..100 {
        let sources: Vec<(String, String)> = (0..50)
            .map(|i| {
                let len = rng.gen_range(20..120);
                (format!("c{corpus_no}f{i:02}"), random_tokens(&mut rng, len).join(" "))
            })
            .collect();
        let index = LshIndex::build(
            sources.iter().map(|(id, s)| (id.as_str(), s.as_str())),
            LshParams::default(),
        )
        .map_err(|e| e.to_string())?;
        for (id, source) in &sources {
            let hits = index.query(source, 3).map_err(|e| e.to_string())?;
            let first = hits.first().ok_or_else(|| format!("{id}: no hits"))?;
            ensure!(first.id == *id, "{id}: first hit was {}", first.id);
            ensure!(first.similarity == 1.0, "{id}: similarity {}", first.similarity);
            queries += 1;
        }
    }
    Ok(format!("100 corpora x 50 functions, {queries} duplicate queries ranked first at 1.0"))
}

type Expected<'a> = (Tool, &'a str, Option<u32>, u8, &'a str, u32);

fn check_findings(found: &[StaticFinding], expected: &[Expected<'_>]) -> Result<(), String> {
    ensure!(found.len() == expected.len(), "{} findings, expected {}", found.len(), expected.len());
    for (f, e) in found.iter().zip(expected) {
        let got = (f.tool, f.rule_id.as_str(), f.cwe, f.severity, f.file.as_str(), f.line);
        ensure!(got == *e, "got {got:?}, expected {e:?}");
    }
    Ok(())
}

fn parser_fixtures() -> Outcome {
    let ff = parse_flawfinder(&read_fixture("flawfinder_sample.csv")).map_err(|e| e.to_string())?;
    check_findings(
        &ff,
        &[
            (Tool::Flawfinder, "strcpy", Some(120), 4, "src/net/packet.c", 42),
            (Tool::Flawfinder, "memcpy", Some(120), 2, "src/net/packet.c", 57),
            (Tool::Flawfinder, "sprintf", Some(134), 4, "src/util/fmt.c", 13),
            (Tool::Flawfinder, "access", Some(362), 3, "src/util/tmp.c", 88),
            (Tool::Flawfinder, "char", Some(119), 2, "src/net/packet.c", 20),
        ],
    )?;
    let cc = parse_cppcheck(&read_fixture("cppcheck_sample.xml")).map_err(|e| e.to_string())?;
    check_findings(
        &cc,
        &[
            (Tool::Cppcheck, "nullPointer", Some(476), 5, "src/core/ctx.c", 31),
            (Tool::Cppcheck, "arrayIndexOutOfBounds", Some(788), 5, "src/core/lookup.c", 19),
            (Tool::Cppcheck, "memleak", Some(401), 5, "src/core/ctx.c", 44),
            (Tool::Cppcheck, "uninitvar", Some(457), 3, "src/core/lookup.c", 12),
            (Tool::Cppcheck, "variableScope", Some(398), 1, "src/core/lookup.c", 8),
            (Tool::Cppcheck, "missingIncludeSystem", None, 1, "", 1),
        ],
    )?;

    let lib = default_library();
    let mapping = ScanMapping::default_mapping();
    let null_deref = &cc[0];
    let node = mapping.resolve(null_deref, &lib);
    let major = lib.node(node).map(|n| n.major().to_owned()).unwrap_or_default();
    ensure!(major == "IDN", "nullPointer resolved to {node} under {major}");
    let ranked = top_k(&map_to_taxonomy(std::slice::from_ref(null_deref), &mapping, &lib), 2)
        .map_err(|e| e.to_string())?;
    ensure!(ranked.codes() == ["IDN"], "ranked {:?}", ranked.codes());
    Ok(format!("{} flawfinder + {} cppcheck findings exact; nullPointer -> {node} (IDN)", ff.len(), cc.len()))
}

fn imbalanced_corpus() -> Corpus {
    let records = (0..230)
        .map(|i| {
            let label = if i % 7 == 0 { Label::Vulnerable } else { Label::Benign };
            FunctionRecord::new(format!("r{i:03}"), "proj", format!("int f{i}(void) {{ return {i}; }}"), label)
        })
        .collect();
    Corpus::from_records(records).expect("valid corpus")
}

fn dataset_prep() -> Outcome {
    let corpus = imbalanced_corpus();
    let before = corpus.label_counts();
    let balanced = undersample(&corpus, 1.0, 5).map_err(|e| e.to_string())?;
    let counts = balanced.label_counts();
    ensure!(counts.benign == counts.vulnerable, "undersampled to {counts:?}");
    let s = split(&balanced, 0.8, 5).map_err(|e| e.to_string())?;
    let total = balanced.len() as f64;
    let expected_train = total * 0.8;
    ensure!(
        (s.train.len() as f64 - expected_train).abs() <= 1.0,
        "train {} of {}",
        s.train.len(),
        balanced.len()
    );
    ensure!(s.train.len() + s.test.len() == balanced.len(), "split lost records");
    for (part, name) in [(&s.train, "train"), (&s.test, "test")] {
        let c = part.label_counts();
        ensure!(
            (c.vulnerable as i64 - c.benign as i64).abs() <= 1,
            "{name} is not stratified: {c:?}"
        );
    }
    let again = split(&balanced, 0.8, 5).map_err(|e| e.to_string())?;
    ensure!(again.train.ids() == s.train.ids(), "split differs for the same seed");
    let other = split(&balanced, 0.8, 6).map_err(|e| e.to_string())?;
    ensure!(other.train.ids() != s.train.ids(), "seed has no effect");
    let train: HashSet<&str> = s.train.ids().into_iter().collect();
    ensure!(s.test.ids().iter().all(|id| !train.contains(id)), "train and test overlap");
    Ok(format!(
        "{}v/{}b -> {}v/{}b -> train {} / test {}",
        before.vulnerable,
        before.benign,
        counts.vulnerable,
        counts.benign,
        s.train.len(),
        s.test.len()
    ))
}

fn echo_client() -> LlmClient {
    LlmClient::from_config(LlmConfig::default()).expect("echo client")
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("dump dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
        })
        .collect()
}

fn prompt_structure() -> Outcome {
    let client = echo_client();
    let mut checked = 0;
    for seed in [7, 14, 17, 23, 31] {
        let run = run_pipeline_with(&RunConfig::synthetic(50, seed), &client).map_err(|e| e.to_string())?;
        ensure!(!run.prompts.is_empty(), "seed {seed}: no prompts");
        check_prompts(&run.prompts).map_err(|e| format!("seed {seed}: {e}"))?;
        checked += run.prompts.len();
    }
    let config = RunConfig::synthetic(50, 17);
    let first = run_pipeline_with(&config, &client).map_err(|e| e.to_string())?;
    let second = run_pipeline_with(&config, &client).map_err(|e| e.to_string())?;
    let dirs = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    write_prompt_dump(&first.prompts, dirs.0.path()).map_err(|e| e.to_string())?;
    write_prompt_dump(&second.prompts, dirs.1.path()).map_err(|e| e.to_string())?;
    let (a, b) = (read_dir_bytes(dirs.0.path()), read_dir_bytes(dirs.1.path()));
    ensure!(a.len() == first.prompts.len(), "dump has {} files", a.len());
    ensure!(a == b, "prompt dumps differ between identical runs");
    Ok(format!("{checked} prompts over 5 seeds, 3 candidates and 5 headings each, dumps byte-identical"))
}

fn check_prompts(prompts: &[SamplePrompt]) -> Result<(), String> {
    for p in prompts {
        ensure!(p.turns.len() == 1, "{}: {} turns", p.id, p.turns.len());
        let text = &p.turns[0];
        check_sections(text).map_err(|e| format!("{}: {e}", p.id))?;
        ensure!(text.matches(ICL_MARKER).count() == 1, "{}: ICL section count", p.id);
        let answers = text.matches("A: Detection probability: ").count();
        ensure!(answers == 3, "{}: {answers} annotated candidates", p.id);
        ensure!(p.candidates.len() == 3, "{}: {} candidates", p.id, p.candidates.len());
        for kind in StepKind::ALL {
            ensure!(text.matches(kind.heading()).count() == 1, "{}: heading {}", p.id, kind.heading());
        }
    }
    Ok(())
}

fn golden(name: &str) -> String {
    read_fixture(&format!("golden/{name}"))
}

fn baseline_fidelity() -> Outcome {
    const CODE: &str = "int f(char *s) {\n  char b[8];\n  strcpy(b, s);\n  return b[0];\n}";
    const DF: &str = "line 2: b defined\nline 3: b, s used";
    let target = FunctionRecord::new("t", "p", CODE, Label::Vulnerable);
    let unfill = |text: &str| text.replacen(CODE, "[CODE]", 1).replacen(DF, "[DF description]", 1);

    let single = |kind, aux| match render_baseline(kind, &target, aux) {
        Ok(BaselinePrompt::Single(text)) => Ok(text),
        other => Err(format!("{kind:?}: unexpected {other:?}")),
    };
    let role = single(BaselineKind::Role, None)?;
    ensure!(unfill(&role) == golden("role.txt"), "role: {role:?}");
    let aux = single(BaselineKind::Auxiliary, Some(DF))?;
    ensure!(unfill(&aux) == golden("auxiliary.txt"), "auxiliary: {aux:?}");
    match render_baseline(BaselineKind::Cot2step, &target, None) {
        Ok(BaselinePrompt::TwoStep([step1, step2])) => {
            ensure!(unfill(&step1) == golden("cot2step_1.txt"), "cot step 1: {step1:?}");
            ensure!(step2 == golden("cot2step_2.txt"), "cot step 2: {step2:?}");
        }
        other => return Err(format!("cot2step: unexpected {other:?}")),
    }
    ensure!(
        render_baseline(BaselineKind::Auxiliary, &target, None).is_err(),
        "auxiliary without data flow accepted"
    );
    Ok("role, auxiliary and two-step templates match golden files".into())
}

fn pipeline_consistency() -> Outcome {
    let config = RunConfig::synthetic(50, 23);
    let outcome = run_pipeline_with(&config, &echo_client()).map_err(|e| e.to_string())?;

    // Provider metrics computed without the pipeline.
    let corpus = synthetic_corpus(50, config.seed, "synthetic");
    let balanced = undersample(&corpus, 1.0, config.seed).map_err(|e| e.to_string())?;
    let s = split(&balanced, 0.8, config.seed).map_err(|e| e.to_string())?;
    let model = train_builtin(&s.train, &BuiltinHyperparams::default()).map_err(|e| e.to_string())?;
    let mut predicted = Vec::new();
    let mut labels = Vec::new();
    for r in s.test.records() {
        predicted.push(Label::from_bool(model.probability(&r.source) >= 0.5));
        labels.push(r.label);
    }
    let standalone = MetricsReport::from_labels(&predicted, &labels).map_err(|e| e.to_string())?;
    ensure!(outcome.metrics == standalone, "pipeline {:?} vs provider {:?}", outcome.metrics, standalone);
    ensure!(
        outcome.metrics.counts.total() as usize == s.test.len(),
        "scored {} of {}",
        outcome.metrics.counts.total(),
        s.test.len()
    );
    let prepared = prepare(&config).map_err(|e| e.to_string())?;
    ensure!(prepared.split.test.ids() == s.test.ids(), "pipeline used a different split");
    Ok(format!(
        "{} samples, F1 {:.3}, MCC {:.3} identical to provider",
        s.test.len(),
        standalone.f1,
        standalone.mcc
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle suite", metric_oracle_suite),
        ("MCC anchor values", mcc_anchors),
        ("CV anchors", cv_anchors),
        ("MinHash fidelity", minhash_fidelity),
        ("LSH self-retrieval", lsh_self_retrieval),
        ("parser fixtures", parser_fixtures),
        ("dataset prep", dataset_prep),
        ("prompt structure goldens", prompt_structure),
        ("baseline fidelity goldens", baseline_fidelity),
        ("pipeline consistency", pipeline_consistency),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
