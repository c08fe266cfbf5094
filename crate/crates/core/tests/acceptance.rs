//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints a PASS/FAIL line even when all of them pass.

mod common;

use std::fs;
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rsearch::backends::ScriptedBackend;
use rsearch::cli::{cmd_rollout, read_episodes, EngineConfig};
use rsearch::masking::{compute_loss_mask, MaskFlag};
use rsearch::protocol::{
    parse_rollout, ByteRange, FormatFlags, SegmentKind, Trajectory, NO_EVIDENCE_SYSTEM_TEMPLATE,
};
use rsearch::retrieval::{load_corpus, render_observation, Bm25Index};
use rsearch::rewards::{exact_match, format_reward, group_advantage, token_f1, RewardConfig};
use rsearch::rollout::Episode;
use rsearch::rstool::{answer_with_evidence, build_evidence_prompt, export_evidence, AnswerConfig};

use common::*;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run_prop<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Check {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn check_format_truth_table() -> Check {
    let cfg = RewardConfig::default();
    let mut outputs = Vec::new();
    for bits in 0..8u8 {
        let (s, a, e) = (bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let flags = FormatFlags {
            retrieval_triggered: s,
            answer_well_formed: a,
            evidence_well_formed: e,
        };
        let got = format_reward(flags, &cfg);
        let want = format_oracle(s, a, e, 0.2, 0.2);
        ensure(got == want, || {
            format!("(S,A,E)=({s},{a},{e}): {got} != {want}")
        })?;
        outputs.push(got);
    }
    outputs.sort_by(f64::total_cmp);
    outputs.dedup();
    ensure(outputs == [0.0, 0.2, 0.4], || {
        format!("output set {outputs:?}")
    })
}

fn check_metric_oracle() -> Check {
    run_prop(1000, (answer_text(), answer_text()), |(p, g)| {
        let f = token_f1(&p, &g);
        prop_assert_eq!(f, oracle_f1(&p, &g), "f1 {:?} vs {:?}", p, g);
        prop_assert_eq!(exact_match(&p, &g), oracle_em(&p, &g));
        prop_assert_eq!(f, token_f1(&g, &p));
        if exact_match(&p, &g) {
            prop_assert_eq!(f, 1.0);
        }
        Ok(())
    })
}

fn case_transcripts() -> Vec<(&'static str, String)> {
    vec![
        ("two_hop", read_fixture("two_hop_transcript.txt")),
        ("four_hop", read_fixture("four_hop_transcript.txt")),
    ]
}

fn non_reasoning_kinds(t: &Trajectory) -> Vec<SegmentKind> {
    t.segments
        .iter()
        .map(|s| s.kind)
        .filter(|k| *k != SegmentKind::Reasoning)
        .collect()
}

fn check_round_trip() -> Check {
    run_prop(500, tag_soup(), |raw| {
        prop_assert_eq!(parse_rollout(&raw, "q").reassemble(), raw);
        Ok(())
    })?;
    use SegmentKind::*;
    for (name, raw) in case_transcripts() {
        let t = parse_rollout(&raw, "q");
        ensure(t.reassemble() == raw, || {
            format!("{name} does not reassemble")
        })?;
        let searches = if name == "two_hop" { 2 } else { 4 };
        let mut want = Vec::new();
        for _ in 0..searches {
            want.extend([SearchQuery, Observation]);
        }
        want.extend([Evidence, Answer]);
        ensure(non_reasoning_kinds(&t) == want, || {
            format!("{name} segment kinds {:?}", non_reasoning_kinds(&t))
        })?;
    }
    Ok(())
}

fn two_hop_episode() -> Episode {
    scripted_case_episode(TWO_HOP_ID, case_rollout_config(), RewardConfig::default())
}

fn check_scripted_episode() -> Check {
    let e = two_hop_episode();
    ensure(e.stats.search_rounds == 2, || {
        format!("search rounds {}", e.stats.search_rounds)
    })?;
    ensure(e.stats.valid_searches == 2, || {
        format!("valid searches {}", e.stats.valid_searches)
    })?;
    let answer = e.trajectory.answer();
    ensure(answer.as_deref() == Some("July 1, 2008"), || {
        format!("answer {answer:?}")
    })?;
    ensure(e.rewards.answer == 1.0, || {
        format!("answer reward {}", e.rewards.answer)
    })?;
    ensure(e.rewards.format == 0.4, || {
        format!("format reward {}", e.rewards.format)
    })?;
    ensure((e.rewards.total - 2.4).abs() <= 1e-12, || {
        format!("total {}", e.rewards.total)
    })
}

/// Exclude spans must equal `expected`, tile the raw text and leave evidence optimized.
fn mask_ok(t: &Trajectory, expected: &[ByteRange]) -> Result<(), String> {
    let mask = compute_loss_mask(t);
    if !mask.covers(t.raw.len()) {
        return Err("mask does not tile the rollout".into());
    }
    let excluded: Vec<ByteRange> = mask.ranges(MaskFlag::Exclude).collect();
    // Adjacent observation blocks merge into one span; compare byte sets.
    let flags = mask.to_byte_flags();
    let mut want = vec![MaskFlag::Optimize; t.raw.len()];
    for r in expected {
        for f in &mut want[r.range()] {
            *f = MaskFlag::Exclude;
        }
    }
    if flags != want {
        return Err(format!("exclude spans {excluded:?} != {expected:?}"));
    }
    for s in t
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Evidence)
    {
        if flags[s.byte_range.range()]
            .iter()
            .any(|f| *f != MaskFlag::Optimize)
        {
            return Err("evidence bytes excluded".into());
        }
    }
    Ok(())
}

fn observation_ranges(t: &Trajectory) -> Vec<ByteRange> {
    t.segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Observation)
        .map(|s| s.byte_range)
        .collect()
}

fn check_mask_partition() -> Check {
    run_prop(500, tag_soup(), |raw| {
        let t = parse_rollout(&raw, "q");
        mask_ok(&t, &observation_ranges(&t)).map_err(TestCaseError::fail)
    })?;
    for (name, raw) in case_transcripts() {
        let t = parse_rollout(&raw, "q");
        mask_ok(&t, &observation_ranges(&t)).map_err(|e| format!("{name}: {e}"))?;
    }
    // For the engine episode, rebuild the rollout from the script and the
    // index to know where the injected blocks must sit.
    let e = two_hop_episode();
    let index = case_index();
    let steps = policy_steps("policy_script.jsonl", TWO_HOP_ID);
    let mut raw = String::new();
    let mut injected = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        raw.push_str(step);
        if let Some(q) = e.trajectory.queries().get(i) {
            let start = raw.len();
            raw.push_str(&render_observation(&index.search(q, 5)));
            injected.push(ByteRange::new(start, raw.len()));
        }
    }
    ensure(raw == e.trajectory.raw, || {
        "engine rollout differs from script + observations".into()
    })?;
    mask_ok(&e.trajectory, &injected).map_err(|m| format!("engine episode: {m}"))?;
    ensure(e.mask == compute_loss_mask(&e.trajectory), || {
        "stored mask differs".into()
    })
}

fn check_group_advantage() -> Check {
    let cfg = RewardConfig::default();
    let group = prop::collection::vec((-50i32..=50).prop_map(|x| f64::from(x) / 10.0), 1..17);
    run_prop(1000, group, |rewards| {
        let adv = group_advantage(&rewards, &cfg);
        prop_assert_eq!(adv.len(), rewards.len());
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
        let constant = rewards.iter().all(|r| *r == rewards[0]);
        if constant {
            prop_assert!(adv.iter().all(|a| *a == 0.0));
        } else {
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() < 1e-9, "std {}", std);
        }
        Ok(())
    })?;
    for n in 1..=8 {
        for v in [0.0, 1.0, 2.4, -3.5] {
            let adv = group_advantage(&vec![v; n], &cfg);
            ensure(adv.iter().all(|a| *a == 0.0), || {
                format!("constant group {v} x{n}: {adv:?}")
            })?;
        }
    }
    Ok(())
}

fn check_retrieval() -> Check {
    let corpus = load_corpus(&fixture("retrieval_corpus.jsonl")).map_err(|e| e.to_string())?;
    ensure(corpus.len() == 20, || {
        format!("corpus has {} docs", corpus.len())
    })?;
    let index = Bm25Index::build(corpus.clone()).map_err(|e| e.to_string())?;
    let queries = read_fixture("retrieval_queries.jsonl");
    let mut n = 0;
    for line in queries.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let (q, relevant) = (
            v["query"].as_str().unwrap(),
            v["relevant"].as_str().unwrap(),
        );
        let hits = index.search(q, corpus.len());
        let top = hits.first().map(|d| d.id.as_str());
        ensure(top == Some(relevant), || {
            format!("{q:?}: top {top:?}, want {relevant}")
        })?;
        let oracle = oracle_bm25(&corpus, q);
        let got: Vec<&str> = hits.iter().map(|d| d.id.as_str()).collect();
        let want: Vec<&str> = oracle.iter().map(|(id, _)| id.as_str()).collect();
        ensure(got == want, || {
            format!("{q:?}: order {got:?} vs oracle {want:?}")
        })?;
        for (d, (_, s)) in hits.iter().zip(&oracle) {
            ensure((d.score - s).abs() < 1e-9, || {
                format!("{q:?}: score {} vs {s}", d.score)
            })?;
        }
        n += 1;
    }
    ensure(n == 10, || format!("{n} queries"))
}

fn check_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = EngineConfig::load(&fixture("scripted.toml")).map_err(|e| e.to_string())?;
    let dataset = fixture("case_dataset.jsonl");
    let mut files = Vec::new();
    for (run, workers) in [(0, 2), (1, 2), (2, 1)] {
        let mut cfg = cfg.clone();
        cfg.rollout.workers = workers;
        let out = dir.path().join(format!("run{run}.jsonl"));
        cmd_rollout(&cfg, &dataset, &out).map_err(|e| e.to_string())?;
        files.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(!files[0].is_empty(), || "empty episode file".into())?;
    ensure(files[0] == files[1], || "two runs differ".into())?;
    ensure(files[0] == files[2], || {
        "worker count changes output".into()
    })
}

fn check_rstool() -> Check {
    let (q, ev) = ("QUERY-SLOT", "EVIDENCE-SLOT");
    let expected = "Answer the question based on the given passages. Only give me the answer and do not output any other words.\n\
                  The following are given passages: EVIDENCE-SLOT\n\
                  Question: QUERY-SLOT\n\
                  Answer:";
    let prompt = build_evidence_prompt(q, ev);
    ensure(prompt == expected, || format!("prompt {prompt:?}"))?;
    // Slot contents are inserted verbatim, even when they look like braces.
    let odd = build_evidence_prompt("{evidence}", "{query}");
    ensure(
        odd.contains("passages: {query}\nQuestion: {evidence}\n"),
        || format!("{odd:?}"),
    )?;

    let e = scripted_case_episode(FOUR_HOP_ID, case_rollout_config(), RewardConfig::default());
    let record = export_evidence(&e).ok_or("no evidence exported")?;
    ensure(
        record.evidence.contains("born in 1966") && record.evidence.contains("born in 1920"),
        || format!("evidence {:?}", record.evidence),
    )?;
    let downstream = ScriptedBackend::load("glm", &fixture("downstream_script.jsonl"))
        .map_err(|e| e.to_string())?;
    let answer = answer_with_evidence(&record, &downstream, &AnswerConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(exact_match(&answer, "My Baby'S Daddy"), || {
        format!("answer {answer:?}")
    })
}

fn check_ablation() -> Check {
    let cfg = EngineConfig::load(&fixture("ablation.toml")).map_err(|e| e.to_string())?;
    let rollout = cfg.rollout_config().map_err(|e| e.to_string())?;
    ensure(
        rollout.system_template == NO_EVIDENCE_SYSTEM_TEMPLATE,
        || "template not swapped".into(),
    )?;
    ensure(!cfg.reward.evidence_reward, || {
        "evidence reward still on".into()
    })?;
    ensure(cfg.cross_family.is_none(), || {
        "ablation should not need a cross-family model".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("ablation.jsonl");
    cmd_rollout(&cfg, &fixture("ablation_dataset.jsonl"), &out).map_err(|e| e.to_string())?;
    let episodes = read_episodes(&out).map_err(|e| e.to_string())?;
    ensure(episodes.len() == 2, || {
        format!("{} episodes", episodes.len())
    })?;
    let mut saw_search = false;
    for e in &episodes {
        let f = e.trajectory.format_flags();
        let want = format_oracle(
            f.retrieval_triggered,
            f.answer_well_formed,
            f.evidence_well_formed,
            0.2,
            0.2,
        );
        ensure(e.rewards.evidence == 0.0, || {
            format!("{}: r_e = {}", e.id, e.rewards.evidence)
        })?;
        ensure(e.rewards.format == want, || {
            format!("{}: format {} vs {want}", e.id, e.rewards.format)
        })?;
        saw_search |= f.retrieval_triggered;
    }
    ensure(saw_search, || "no episode searched".into())?;

    // An evidence box written anyway still earns no evidence reward.
    let mut rewards = cfg.reward.clone();
    rewards.evidence_reward = false;
    let e = scripted_case_episode(TWO_HOP_ID, case_rollout_config(), rewards);
    ensure(e.rewards.evidence == 0.0, || {
        format!("r_e = {}", e.rewards.evidence)
    })?;
    ensure(e.rewards.format == 0.4, || {
        format!("format {}", e.rewards.format)
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("format reward truth table", check_format_truth_table),
        ("EM/F1 agree with brute-force oracle", check_metric_oracle),
        ("protocol round trip", check_round_trip),
        ("scripted end-to-end episode", check_scripted_episode),
        ("loss mask partition", check_mask_partition),
        ("group advantage normalization", check_group_advantage),
        ("BM25 ranking vs brute force", check_retrieval),
        ("rollout determinism", check_determinism),
        ("evidence tool prompt and round trip", check_rstool),
        ("evidence ablation via config", check_ablation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(()) => println!("criterion {:>2} PASS  {name}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
