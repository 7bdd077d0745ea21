//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{bits_eq, golden, moments, naive_match, splice, unique_instance};
use rand::seq::SliceRandom;
use rand::Rng;
use semxfer::bench::{self, BenchConfig};
use semxfer::metrics::{
    bhattacharyya, default_ap_thresholds, depth_rmse, flow_l1, iou, keypoint_ap, BinLayout, Histogram,
};
use semxfer::random;
use semxfer::service::protocol::{encode_frame, MsgType};
use semxfer::service::{Client, Response, Server};
use semxfer::{
    adain_masked, brute_force_match, inject, masked_cosine_match, transfer_step, CorrespondenceMap, DepthMap,
    FeatureMap, FlowMap, ObjectMask, ObjectPair, SessionConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const EPS: f64 = 1e-8;

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    for seed in 0..100 {
        let inst = random::match_instance(&mut random::rng(seed), 16, 8);
        let fast = masked_cosine_match(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS)
            .map_err(|e| e.to_string())?;
        let brute = brute_force_match(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS)
            .map_err(|e| e.to_string())?;
        ensure(fast == brute, || format!("seed {seed}: fast != brute force"))?;
        let naive = naive_match(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS);
        ensure(fast == naive, || format!("seed {seed}: fast != scalar oracle"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("100 instances, {:.1} ms", took.as_secs_f64() * 1e3))
}

fn mask_law() -> Outcome {
    let cfg = SessionConfig::default();
    for seed in 0..100u64 {
        let mut rng = random::rng(1000 + seed);
        let (h, w, c) = (rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=8));
        let target = random::feature_map(&mut rng, h, w, c);
        let rearranged = random::feature_map(&mut rng, h, w, c);
        let fill = rng.gen_range(0.0..1.0);
        let m = random::mask(&mut rng, h, w, fill);
        let out = inject(&rearranged, &target, &m).map_err(|e| e.to_string())?;
        ensure(bits_eq(&out, &splice(&rearranged, &target, &m)), || {
            format!("inject seed {seed}")
        })?;

        let n = rng.gen_range(1..=3);
        let owner: Vec<usize> = (0..h * w).map(|_| rng.gen_range(0..=n)).collect();
        let objects: Vec<ObjectPair> = (0..n)
            .map(|i| {
                let (rh, rw) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
                let r = random::feature_map(&mut rng, rh, rw, c);
                let mr = random::non_empty_mask(&mut rng, rh, rw, 0.5);
                ObjectPair::new(r, mr, ObjectMask::from_fn(h, w, |x, y| owner[y * w + x] == i + 1)).unwrap()
            })
            .collect();
        let out =
            transfer_step(&target, &objects, &cfg, cfg.readout_t, cfg.readout_layer).map_err(|e| e.to_string())?;
        let background = ObjectMask::from_fn(h, w, |x, y| owner[y * w + x] == 0);
        ensure(bits_eq(&splice(&target, &out, &background), &out), || {
            format!("transfer_step seed {seed}")
        })?;
    }
    Ok("100 inject + 100 transfer_step instances, bit-exact".into())
}

fn identity_law() -> Outcome {
    let cfg = SessionConfig::default();
    for (seed, (h, w)) in [(1u64, (4usize, 4usize)), (2, (7, 3)), (3, (8, 8)), (4, (1, 9))] {
        let mut rng = random::rng(seed);
        let c = h * w + 2;
        let data = (0..h * w)
            .flat_map(|q| {
                (0..c)
                    .map(|k| if k == q { 1.0 } else { rng.gen_range(0.0f32..0.01) })
                    .collect::<Vec<_>>()
            })
            .collect();
        let map = FeatureMap::new(h, w, c, data).unwrap();
        let full = ObjectMask::full(h, w);
        let corr = masked_cosine_match(&map, &map, &full, &full, EPS).map_err(|e| e.to_string())?;
        ensure(corr == CorrespondenceMap::identity(h, w), || {
            format!("{h}x{w}: not the identity permutation")
        })?;
        let pair = ObjectPair::new(map.clone(), full.clone(), full).unwrap();
        for (t, l) in [(42, 2), (cfg.readout_t, cfg.readout_layer), (100, 3)] {
            let out = transfer_step(&map, std::slice::from_ref(&pair), &cfg, t, l).map_err(|e| e.to_string())?;
            ensure(bits_eq(&out, &map), || {
                format!("{h}x{w} t={t} l={l}: transfer_step not identity")
            })?;
        }
    }
    Ok("4 grids, identity correspondence and bit-exact transfer".into())
}

fn invariance_suite() -> Outcome {
    let mut checked = 0usize;
    for seed in 0..50u64 {
        let inst = unique_instance(seed, 16, 8, 1e-3);
        let base = masked_cosine_match(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS).unwrap();
        let mut rng = random::rng(seed ^ 0x5eed);
        let (h, w, c) = (
            inst.reference.height(),
            inst.reference.width(),
            inst.reference.channels(),
        );

        let lambdas: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.1f32..10.0)).collect();
        let data = inst
            .reference
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * lambdas[i / c])
            .collect();
        let scaled = FeatureMap::new(h, w, c, data).unwrap();
        let after = masked_cosine_match(&inst.target, &scaled, &inst.m_target, &inst.m_ref, EPS).unwrap();
        ensure(after == base, || format!("seed {seed}: scaling changed matches"))?;

        let mut pi: Vec<usize> = (0..h * w).collect();
        pi.shuffle(&mut rng);
        let mut data = vec![0.0f32; h * w * c];
        let mut bits = vec![false; h * w];
        for old in 0..h * w {
            data[pi[old] * c..(pi[old] + 1) * c].copy_from_slice(inst.reference.pixel(old));
            bits[pi[old]] = inst.m_ref.get(old);
        }
        let permuted = FeatureMap::new(h, w, c, data).unwrap();
        let moved = masked_cosine_match(
            &inst.target,
            &permuted,
            &inst.m_target,
            &ObjectMask::new(h, w, bits).unwrap(),
            EPS,
        )
        .unwrap();
        for q in 0..inst.target.pixels() {
            ensure(moved.get(q) == base.get(q).map(|p| pi[p as usize] as u32), || {
                format!("seed {seed} q {q}: permutation")
            })?;
        }
        checked += inst.m_target.count();
    }
    ensure(checked > 0, || "no query survived the uniqueness filter".into())?;
    Ok(format!("50 seeds, {checked} unique-maximum queries"))
}

fn adain_moments() -> Outcome {
    let mut done = 0;
    let mut worst = 0.0f64;
    let mut seed = 0u64;
    while done < 50 {
        let mut rng = random::rng(5000 + seed);
        seed += 1;
        let (h, w, c) = (rng.gen_range(2..=16), rng.gen_range(2..=16), rng.gen_range(1..=8));
        let content = random::feature_map(&mut rng, h, w, c);
        let style = random::feature_map(&mut rng, h, w, c);
        let m_c = random::non_empty_mask(&mut rng, h, w, 0.7);
        let m_s = random::non_empty_mask(&mut rng, h, w, 0.7);
        if moments(&content, &m_c).iter().any(|(_, s)| *s < 1e-3) {
            continue;
        }
        let out = adain_masked(&content, &style, &m_c, &m_s, EPS).map_err(|e| e.to_string())?;
        for ((om, os), (sm, ss)) in moments(&out, &m_c).into_iter().zip(moments(&style, &m_s)) {
            worst = worst.max((om - sm).abs()).max((os - ss).abs());
        }
        done += 1;
    }
    ensure(worst <= 1e-5, || format!("max moment error {worst:e}"))?;
    Ok(format!("50 instances, max moment error {worst:.2e}"))
}

// The literals are the published tolerances, not approximations of constants.
#[allow(clippy::approx_constant)]
fn metric_closed_forms() -> Outcome {
    let h = |p: [f64; 2]| Histogram::new(p.to_vec(), BinLayout::gray(2)).unwrap();
    let b = bhattacharyya(&h([0.5, 0.5]), &h([1.0, 0.0])).unwrap();
    ensure((b - 0.54120).abs() <= 1e-4, || format!("bhattacharyya {b}"))?;
    let ap = keypoint_ap(&[0.7], &default_ap_thresholds()).unwrap();
    ensure(ap == 0.5, || format!("AP {ap}"))?;
    let d = depth_rmse(
        &DepthMap::new(1, 2, vec![0.0, 1.0]).unwrap(),
        &DepthMap::new(1, 2, vec![1.0, 1.0]).unwrap(),
        &ObjectMask::full(1, 2),
    )
    .unwrap();
    ensure((d - 0.70711).abs() <= 1e-5, || format!("depth_rmse {d}"))?;
    let gt = FlowMap::new(
        2,
        2,
        vec![[0.0, 0.0], [3.5, -2.0], [1.0, 1.0], [-4.0, 0.25]],
        vec![true; 4],
    )
    .unwrap();
    let pred = FlowMap::new(
        2,
        2,
        gt.displacement().iter().map(|[x, y]| [x + 1.0, y + 1.0]).collect(),
        vec![true; 4],
    )
    .unwrap();
    let f = flow_l1(&pred, &gt).unwrap();
    ensure(f == 2.0, || format!("flow_l1 {f}"))?;
    let a = ObjectMask::new(1, 3, vec![true, true, false]).unwrap();
    let bm = ObjectMask::new(1, 3, vec![false, true, true]).unwrap();
    let m = iou(&a, &bm).unwrap();
    ensure((m - 0.33333).abs() <= 1e-5, || format!("miou {m}"))?;
    Ok(format!("D_B={b:.5} AP={ap} rmse={d:.5} flow={f} miou={m:.5}"))
}

fn service_equivalence() -> Outcome {
    for seed in [0u64, 1, 2] {
        let addr = Server::bind("127.0.0.1:0")
            .and_then(Server::spawn)
            .map_err(|e| e.to_string())?;
        let mut client = Client::connect(addr).map_err(|e| e.to_string())?;
        let steps = golden::transcript(seed);
        ensure(steps.len() == 20, || format!("transcript has {} requests", steps.len()))?;
        for (i, (got, want)) in golden::play(&mut client, &steps).into_iter().enumerate() {
            ensure(got.encode_payload() == want.encode_payload() && got == want, || {
                format!("seed {seed} step {i}: {got:?}")
            })?;
        }
        // Malformed frames, then a well-formed one on the same connection.
        let mut bad_version = encode_frame(MsgType::CloseSession, 0, &[]);
        bad_version[4] = 9;
        let mut bad_type = encode_frame(MsgType::CloseSession, 0, &[]);
        bad_type[6] = 250;
        let truncated = encode_frame(MsgType::Rearrange, 1, &[1, 2, 3]);
        for (frame, code) in [(bad_version, 1u16), (bad_type, 3), (truncated, 4)] {
            match client.send_raw(&frame).map_err(|e| e.to_string())? {
                Response::Error { code: c, .. } if c == code => {}
                other => return Err(format!("malformed frame answered with {other:?}")),
            }
        }
        ensure(client.init_session(&SessionConfig::default()).is_ok(), || {
            "connection unusable after malformed frames".into()
        })?;
    }
    Ok("3 x 20-request transcripts bit-identical, malformed frames answered with ERROR".into())
}

fn performance() -> Outcome {
    let cfg = BenchConfig {
        iters: 5,
        ..BenchConfig::default()
    };
    let report = bench::run(&cfg).map_err(|e| e.to_string())?;
    let mut lat = report.latencies.clone();
    lat.sort();
    let median = lat[lat.len() / 2];
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "{}x{}x{} full masks: median {:.1} ms, min {:.1} ms on {threads} thread(s)",
        cfg.height,
        cfg.width,
        cfg.channels,
        median.as_secs_f64() * 1e3,
        lat[0].as_secs_f64() * 1e3
    );
    ensure(median <= Duration::from_secs(1), || detail.clone())?;
    Ok(detail)
}

fn bench_checksum(threads: Option<usize>) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semxfer"));
    cmd.args([
        "bench",
        "--h",
        "64",
        "--w",
        "64",
        "--c",
        "640",
        "--mask-fill",
        "1.0",
        "--iters",
        "2",
        "--seed",
        "0",
    ]);
    if let Some(t) = threads {
        cmd.args(["--threads", &t.to_string()]);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("checksum\t").map(str::to_string))
        .ok_or_else(|| "no checksum line".into())
}

fn determinism() -> Outcome {
    let runs = [None, None, Some(1), Some(4)]
        .into_iter()
        .map(bench_checksum)
        .collect::<Result<Vec<_>, _>>()?;
    ensure(runs.windows(2).all(|w| w[0] == w[1]), || {
        format!("checksums differ: {runs:?}")
    })?;
    Ok(format!("checksum {} across 2 runs and 1/4 threads", runs[0]))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle-equivalence", oracle_equivalence),
        ("mask-law", mask_law),
        ("identity-law", identity_law),
        ("invariance-suite", invariance_suite),
        ("adain-moments", adain_moments),
        ("metric-closed-forms", metric_closed_forms),
        ("service-library-equivalence", service_equivalence),
        ("performance", performance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
