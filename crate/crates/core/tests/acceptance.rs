//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line each.
//!
//! A criterion that needs an external TeX toolchain which is not installed is
//! reported as `FAIL (blocked)`. Blocked failures do not change the exit
//! status unless `MIXFORGE_ACCEPTANCE_STRICT=1`; any other failure does.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::oracles::{best_alignment_matches, fuzz_string, levenshtein_recursive, rng};
use mixforge::assemble::{assemble_document, body_of, PreambleRegistry};
use mixforge::augment::{augment, AugmentSpec};
use mixforge::bpe;
use mixforge::config::PipelineConfig;
use mixforge::corpus::{load_corpus, Corpus};
use mixforge::lexer::{check_balance, count_tokens, detokenize, tokenize};
use mixforge::metrics::{aligned_matches, bleu, edit_distance};
use mixforge::mixer::{chunk, mix, MixPlan, SamplePlanItem};
use mixforge::pipeline;
use mixforge::pseudo::{gen_display_block, gen_formula, gen_table, random_table_spec, FormulaGrammar};
use mixforge::render::{batch_render, RasterSpec, RenderInput, RenderOutcome, ToolPaths};
use mixforge::seed::{derive, stage};
use image::{GrayImage, Luma};
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Blocked(String),
}

struct Report {
    hard_failures: usize,
    blocked: usize,
}

impl Report {
    fn run(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let verdict = f();
        let took = start.elapsed();
        let timing = match limit {
            Some(l) => format!("{:.2} s, limit {} s", took.as_secs_f64(), l.as_secs()),
            None => format!("{:.2} s", took.as_secs_f64()),
        };
        let over = limit.is_some_and(|l| took > l);
        let line = match verdict {
            Verdict::Pass(d) if !over => format!("PASS  {name}: {d} ({timing})"),
            Verdict::Pass(d) => {
                self.hard_failures += 1;
                format!("FAIL  {name}: {d} but over time ({timing})")
            }
            Verdict::Fail(d) => {
                self.hard_failures += 1;
                format!("FAIL  {name}: {d} ({timing})")
            }
            Verdict::Blocked(d) => {
                self.blocked += 1;
                format!("FAIL  {name}: blocked, {d} ({timing})")
            }
        };
        println!("{line}");
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn fixture() -> Corpus {
    load_corpus(&common::fixture_corpus()).expect("fixture corpus loads")
}

/// The fixture corpus cycled until `plan` has emitted `target` tokens.
fn big_mix(target: u64, seed: u64) -> (mixforge::mixer::MixOutput, Corpus) {
    let corpus = fixture();
    let plan = MixPlan {
        seed,
        target_total_tokens: Some(target),
        ..MixPlan::default()
    };
    let out = mix(corpus.segments.iter().cloned().cycle(), &corpus.lexicons, &plan).expect("mix");
    (out, corpus)
}

type ScriptCheck = (&'static str, fn(char) -> bool);

fn lexer_roundtrip() -> Verdict {
    let mut r = rng(2024);
    let mut strings: Vec<String> = (0..10_000).map(|_| fuzz_string(&mut r, 160)).collect();
    // The fixture corpus has one directory per language.
    for entry in walk(&common::fixture_corpus()) {
        let text = fs::read_to_string(entry).unwrap();
        strings.extend(text.lines().map(str::to_owned));
    }
    // Latin with and without accents covers en, fr, de and es.
    let scripts: [ScriptCheck; 5] = [
        ("latin", |c| c.is_ascii_alphabetic()),
        ("latin-accented", |c| "éèàçüößñáíóú".contains(c)),
        ("cyrillic", |c| ('а'..='я').contains(&c) || ('А'..='Я').contains(&c)),
        ("han", |c| ('\u{4e00}'..='\u{9fff}').contains(&c)),
        ("kana", |c| ('\u{3040}'..='\u{30ff}').contains(&c)),
    ];
    let missing: Vec<&str> = scripts
        .iter()
        .filter(|(_, f)| !strings.iter().any(|s| s.chars().any(f)))
        .map(|(n, _)| *n)
        .collect();
    let failures = strings
        .iter()
        .filter(|s| detokenize(&tokenize(s)) != **s)
        .count();
    check(
        failures == 0 && missing.is_empty() && strings.len() >= 10_000,
        format!(
            "{}/{} strings roundtrip, scripts missing: {:?}",
            strings.len() - failures,
            strings.len(),
            missing
        ),
    )
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn pseudo_balance() -> Verdict {
    let g = FormulaGrammar::default();
    let lexicon: Vec<String> = ["alpha", "beta", "Wert", "число"].map(String::from).to_vec();
    let mut bad = Vec::new();
    let mut left_right = 0;
    let mut envs = 0;
    for i in 0..10_000u64 {
        let s = match i % 3 {
            0 => format!("${}$", gen_formula(i, &g).unwrap()),
            1 => gen_display_block(i, &g).unwrap(),
            _ => gen_table(i, &random_table_spec(i, &lexicon), &g).unwrap(),
        };
        match check_balance(&tokenize(&s)) {
            Ok(b) => {
                left_right += b.left_right_pairs;
                envs += b.environments;
            }
            Err(e) => bad.push((s, e)),
        }
    }
    check(
        bad.is_empty() && left_right > 0 && envs > 0,
        format!(
            "{} imbalanced of 10000 ({left_right} \\left/\\right pairs, {envs} environments checked){}",
            bad.len(),
            bad.first().map(|(s, e)| format!("; first: {s:?} {e}")).unwrap_or_default()
        ),
    )
}

fn mix_ratio_and_budget(report: &mut Report) {
    let mut samples: Option<Vec<SamplePlanItem>> = None;
    report.run("mix ratio 1/3 +-0.02 over 1e6 tokens", Some(Duration::from_secs(60)), || {
        let (out, _) = big_mix(1_000_000, 7);
        let f = out.realized_real_fraction();
        let total = out.histogram.total();
        let chunks = chunk(out.segments, 296).expect("chunk");
        samples = Some(chunks.samples);
        check(
            total >= 1_000_000 && (f - 1.0 / 3.0).abs() <= 0.02,
            format!("real fraction {f:.4} over {total} tokens"),
        )
    });
    report.run("budget: no sample over 296 tokens", None, || {
        let Some(samples) = samples else {
            return Verdict::Fail("mix run produced no samples".into());
        };
        let over = samples
            .iter()
            .filter(|s| s.total_tokens > 296 || count_tokens(&body_of(s)) > 296)
            .count();
        let max = samples.iter().map(|s| count_tokens(&body_of(s))).max().unwrap_or(0);
        check(
            over == 0 && !samples.is_empty(),
            format!("{over} of {} samples over budget, largest {max}", samples.len()),
        )
    });
}

/// Writes the first `n` samples of a mixed run as documents.
fn write_docs(dir: &Path, n: usize) -> Vec<RenderInput> {
    let (out, _) = big_mix(400 * n as u64, 13);
    let samples = chunk(out.segments, 296).unwrap().samples;
    let registry = PreambleRegistry::default();
    let page = mixforge::assemble::PageGeometry::for_raster(500, 400, 100);
    fs::create_dir_all(dir).unwrap();
    samples
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, s)| {
            let id = pipeline::sample_id(i);
            let pre = registry
                .choose(&s.languages(), derive(13, stage::ASSEMBLE, i as u64))
                .unwrap();
            let doc = assemble_document(s, &registry, &pre.id, &page).unwrap();
            let tex_path = dir.join(format!("{id}.tex"));
            fs::write(&tex_path, doc.source).unwrap();
            RenderInput { sample_id: id, tex_path }
        })
        .collect()
}

fn render_batch(tools: &ToolPaths, root: &Path) -> Result<(usize, usize, usize, usize), String> {
    let inputs = write_docs(&root.join("tex"), 200);
    let outcomes = batch_render(&inputs, &root.join("out"), 8, &RasterSpec::default(), tools)
        .map_err(|e| e.to_string())?;
    let mut images = 0;
    let mut quarantined = 0;
    let mut wrong_size = 0;
    for o in &outcomes {
        match o {
            RenderOutcome::Image(p) => {
                images += 1;
                let img = image::open(p).map_err(|e| e.to_string())?;
                if (img.width(), img.height()) != (500, 400) {
                    wrong_size += 1;
                }
            }
            RenderOutcome::Quarantined(_) => quarantined += 1,
        }
    }
    Ok((inputs.len(), images, quarantined, wrong_size))
}

fn compile_real_tools() -> Verdict {
    let tools = ToolPaths::default().with_env_overrides();
    if !common::real_tools_available() && std::env::var_os(mixforge::render::XELATEX_ENV).is_none() {
        return Verdict::Blocked(format!(
            "`{}` and `{}` are not installed in this environment",
            tools.xelatex.display(),
            tools.rasterizer.display()
        ));
    }
    let dir = tempfile::tempdir().unwrap();
    match render_batch(&tools, dir.path()) {
        Err(e) => Verdict::Fail(e),
        Ok((n, images, q, wrong)) => {
            let rate = images as f64 / n as f64;
            check(
                n == 200 && n == images + q && rate >= 0.99 && wrong == 0,
                format!("{images}/{n} compiled ({:.1}%), {q} quarantined, {wrong} images not 500x400", rate * 100.0),
            )
        }
    }
}

fn compile_stub_tools() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let tools = common::stub_tools(&dir.path().join("bin"));
    match render_batch(&tools, dir.path()) {
        Err(e) => Verdict::Fail(e),
        Ok((n, images, q, wrong)) => check(
            n == 200 && n == images + q && images as f64 / n as f64 >= 0.99 && wrong == 0,
            format!("{images}/{n} images, {q} quarantined, {wrong} not 500x400"),
        ),
    }
}

fn metrics_oracles() -> Verdict {
    let mut r = rng(77);
    let alphabet = ['a', 'b', 'c'];
    let mut ed_mismatch = 0;
    for _ in 0..10_000 {
        let word = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<char> {
            let n = r.random_range(0..=12);
            (0..n).map(|_| alphabet[r.random_range(0..3)]).collect()
        };
        let (a, b) = (word(&mut r), word(&mut r));
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        if edit_distance(&sa, &sb).raw != levenshtein_recursive(&a, &b) {
            ed_mismatch += 1;
        }
    }
    let toks = ["x", "y", "{", "}"];
    let mut pr_mismatch = 0;
    let mut pr_pairs = 0;
    for _ in 0..1_500 {
        let seq = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<&str> {
            let n = r.random_range(0..=8);
            (0..n).map(|_| toks[r.random_range(0..toks.len())]).collect()
        };
        let (a, b) = (seq(&mut r), seq(&mut r));
        pr_pairs += 1;
        if aligned_matches(&a, &b) != best_alignment_matches(&a, &b) {
            pr_mismatch += 1;
        }
    }
    // Hand-computed: clipped matches 8/10, 6/9, 4/8, 2/7, brevity exp(-0.2).
    let reference: Vec<&str> = "x ^ { 2 } + y ^ { 2 } =".split(' ').collect();
    let hypothesis: Vec<&str> = "x ^ { 2 } - y ^ { 3".split(' ').collect();
    let b = bleu(&reference, &hypothesis, 4);
    let fixture_ok = (b - 43.014_638_322_597_85).abs() < 1e-9;
    check(
        ed_mismatch == 0 && pr_mismatch == 0 && fixture_ok,
        format!(
            "edit distance 10000 pairs ({ed_mismatch} mismatches), alignment {pr_pairs} pairs ({pr_mismatch} mismatches), BLEU fixture {b:.6}"
        ),
    )
}

fn determinism() -> Verdict {
    let mut manifests = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::load(&common::write_config(dir.path(), 31, "")).unwrap();
        pipeline::synth(&cfg).unwrap();
        manifests.push(fs::read(pipeline::manifest_path(&cfg)).unwrap());
        dirs.push((dir, cfg));
    }
    let synth_same = manifests[0] == manifests[1];

    let tools_real = common::real_tools_available();
    let mut rendered = Vec::new();
    for ((dir, cfg), workers) in dirs.iter_mut().zip([1, 8]) {
        if !tools_real {
            cfg.tools = common::stub_tools(&dir.path().join("bin"));
        }
        let path = pipeline::manifest_path(cfg);
        if let Err(e) = pipeline::render(cfg, &path, Some(workers)) {
            return Verdict::Fail(format!("render failed: {e}"));
        }
        let mut bytes = fs::read(&path).unwrap();
        let images = dir.path().join("out/images");
        let mut names: Vec<_> = fs::read_dir(&images).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            bytes.extend(fs::read(p).unwrap());
        }
        rendered.push(bytes);
    }
    let render_same = rendered[0] == rendered[1];
    check(
        synth_same && render_same,
        format!(
            "synth manifests identical: {synth_same}; render manifests and images 1 vs 8 workers identical: {render_same} ({} tools)",
            if tools_real { "real" } else { "stub" }
        ),
    )
}

fn bpe_criterion() -> Verdict {
    let mut lines: Vec<String> = Vec::new();
    for p in walk(&common::fixture_corpus()) {
        lines.extend(fs::read_to_string(p).unwrap().lines().map(str::to_owned));
    }
    let vocab = bpe::train_lenient(lines.iter().map(String::as_str), 2000).unwrap();
    let broken = lines
        .iter()
        .filter(|l| vocab.decode(&vocab.encode(l).ids).unwrap() != **l)
        .count();
    let again = bpe::train_lenient(lines.iter().map(String::as_str), 2000).unwrap();
    let deterministic = again.merges() == vocab.merges();
    let base = bpe::SPECIALS.len() + {
        let mut a = bpe::default_alphabet();
        a.insert('a');
        a.len()
    };
    let aaaa = bpe::train(["aaaa"], base + 1).unwrap();
    let first = aaaa.merge_pairs().first().map(|(l, r)| (l.to_string(), r.to_string()));
    check(
        broken == 0 && deterministic && first == Some(("a".into(), "a".into())),
        format!(
            "{}/{} corpus lines roundtrip with {} merges; deterministic: {deterministic}; first merge on \"aaaa\": {first:?}",
            lines.len() - broken,
            lines.len(),
            vocab.merges().len()
        ),
    )
}

fn augment_statistics() -> Verdict {
    let gray = GrayImage::from_pixel(500, 400, Luma([128]));
    let spec = AugmentSpec {
        noise_sigma: 10.0,
        seed: 5,
        ..AugmentSpec::default()
    };
    let out = augment(&gray, &spec).unwrap();
    let n = f64::from(500 * 400);
    let vals: Vec<f64> = out.pixels().map(|p| f64::from(p.0[0])).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let page = GrayImage::from_fn(500, 400, |x, y| Luma([((x * 31 + y * 17) % 256) as u8]));
    let identity = augment(&page, &AugmentSpec::default()).unwrap();
    let same = identity.as_raw() == page.as_raw();
    check(
        (9.0..=11.0).contains(&sd) && same,
        format!("noise sigma 10 measured {sd:.3}; identity spec byte-identical: {same}"),
    )
}

fn main() {
    let strict = std::env::var("MIXFORGE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut report = Report {
        hard_failures: 0,
        blocked: 0,
    };
    println!("acceptance suite");
    report.run("lexer roundtrip, 10k fuzz strings, seven languages", Some(Duration::from_secs(5)), lexer_roundtrip);
    report.run("pseudo-generation balance, 10k outputs", Some(Duration::from_secs(10)), pseudo_balance);
    mix_ratio_and_budget(&mut report);
    report.run(
        "compile >=99% + conservation, 200 docs, real xelatex/pdftoppm",
        Some(Duration::from_secs(600)),
        compile_real_tools,
    );
    report.run(
        "compile conservation + 500x400, 200 docs, stub tools (supplementary)",
        Some(Duration::from_secs(600)),
        compile_stub_tools,
    );
    report.run("metrics oracle equivalence", Some(Duration::from_secs(30)), metrics_oracles);
    report.run("determinism: synth twice, render 1 vs 8 workers", None, determinism);
    report.run("BPE roundtrip, first merge, determinism", None, bpe_criterion);
    report.run("augment noise statistics and identity", None, augment_statistics);

    let summary: BTreeMap<&str, usize> =
        [("failed", report.hard_failures), ("blocked", report.blocked)].into();
    println!("summary: {summary:?}");
    if report.hard_failures > 0 || (strict && report.blocked > 0) {
        std::process::exit(1);
    }
}
