//! One PASS/FAIL line per acceptance criterion.
//!
//! Criteria 1-4 and 7-9 are exact or structural and fail the test when they
//! do not hold. Criteria 5 and 6 are empirical toy-scale reproductions; their
//! verdict is printed but does not change the exit status.

use std::time::Instant;

use depthadapt_core::augment::{
    apply_chain, cutmix_with_box, rand_augment, realign_prediction, AugmentOp, AugmentSet,
    GeometricRecord, RandAugmentPolicy,
};
use depthadapt_core::dataset::{render_toy_samples, DepthMap, DepthSample, Domain, Image};
use depthadapt_core::losses::{
    compose_batch, consistency_loss, pairwise_source_loss, pretrain_loss, source_loss, total_loss,
    Alignment, LossConfig, Ratio, SourceVariant,
};
use depthadapt_core::metrics::{compute_metrics, EvalConfig};
use depthadapt_core::model::{Checkpoint, DepthNet};
use depthadapt_core::trainer::{evaluate, RunConfig, TrainConfig, Trainer};
use depthadapt_core::uncertainty::{select_by_scores, uncertainty_score};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn report(id: u8, name: &str, started: Instant, verdict: &Verdict) {
    let secs = started.elapsed().as_secs_f64();
    match verdict {
        Ok(detail) => println!("PASS {id} {name}: {detail} ({secs:.1}s)"),
        Err(detail) => println!("FAIL {id} {name}: {detail} ({secs:.1}s)"),
    }
}

fn random_map(rng: &mut ChaCha8Rng, side: usize) -> Array2<f64> {
    Array2::from_shape_fn((side, side), |_| rng.random_range(1.0..20.0))
}

fn random_label(rng: &mut ChaCha8Rng) -> DepthMap {
    Array2::from_shape_fn((4, 4), |_| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(1.0..20.0f32)
        }
    })
}

/// Central differences against `analytic`, 1e-4 relative.
fn fd_check(
    what: &str,
    maps: &[Array2<f64>],
    analytic: &[Array2<f64>],
    f: &dyn Fn(&[Array2<f64>]) -> f64,
) -> Result<(), String> {
    const H: f64 = 1e-6;
    for (k, g) in analytic.iter().enumerate() {
        for idx in 0..maps[k].len() {
            let bumped = |d: f64| {
                let mut m = maps.to_vec();
                m[k].as_slice_mut().unwrap()[idx] += d;
                f(&m)
            };
            let fd = (bumped(H) - bumped(-H)) / (2.0 * H);
            let an = g.as_slice().unwrap()[idx];
            ensure(
                (fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-9,
                format!("{what}: input {k} entry {idx} fd {fd} analytic {an}"),
            )?;
        }
    }
    Ok(())
}

fn criterion_1() -> Verdict {
    let plan = compose_batch(12, Ratio::new(2, 1).map_err(|e| e.to_string())?, 3)
        .map_err(|e| e.to_string())?;
    ensure(
        plan.concat_total == 42,
        format!("concat_total {}", plan.concat_total),
    )?;
    Ok("concat_total=42".into())
}

fn naive_metrics(pred: &DepthMap, gt: &DepthMap) -> [f64; 7] {
    let mut acc = [0.0; 7];
    let mut n = 0.0;
    for (p, g) in pred.iter().zip(gt.iter()) {
        if *g <= 0.0 {
            continue;
        }
        let g = f64::from(*g).clamp(1e-3, 80.0);
        let p = f64::from(*p).clamp(1e-3, 80.0);
        n += 1.0;
        acc[0] += (p - g).abs() / g;
        acc[1] += (p - g).powi(2) / g;
        acc[2] += (p - g).powi(2);
        acc[3] += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        acc[4] += f64::from(u8::from(ratio < 1.25));
        acc[5] += f64::from(u8::from(ratio < 1.25f64.powi(2)));
        acc[6] += f64::from(u8::from(ratio < 1.25f64.powi(3)));
    }
    let mut out = acc.map(|v| v / n);
    out[2] = out[2].sqrt();
    out[3] = out[3].sqrt();
    out
}

fn criterion_2() -> Verdict {
    let cfg = EvalConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut map = |invalid: f64| {
            Array2::from_shape_fn((8, 8), |_| {
                if rng.random_bool(invalid) {
                    0.0
                } else {
                    rng.random_range(0.1..100.0f32)
                }
            })
        };
        let gt = map(0.1);
        let pred = map(0.0);
        let got = compute_metrics(&pred, &gt, &cfg)
            .map_err(|e| e.to_string())?
            .values();
        for (a, b) in got.iter().zip(naive_metrics(&pred, &gt)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-12, format!("max oracle deviation {worst:e}"))?;
    let row = |v: &[f32]| Array2::from_shape_vec((1, 3), v.to_vec()).unwrap();
    let hand = compute_metrics(&row(&[2.0, 5.0, 6.0]), &row(&[2.0, 4.0, 8.0]), &cfg)
        .map_err(|e| e.to_string())?;
    ensure(
        (hand.abs_rel - 0.1667).abs() < 1e-4 && (hand.a1 - 1.0 / 3.0).abs() < 1e-4,
        format!("hand example AbsRel {} A1 {}", hand.abs_rel, hand.a1),
    )?;
    Ok(format!(
        "oracle max deviation {worst:.1e}, hand AbsRel {:.4} A1 {:.4}",
        hand.abs_rel, hand.a1
    ))
}

fn criterion_3() -> Verdict {
    let e = |e: depthadapt_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds: Vec<_> = (0..3).map(|_| random_map(&mut rng, 4)).collect();
    let labels: Vec<_> = (0..3).map(|_| random_label(&mut rng)).collect();
    let l = pretrain_loss(&preds, &labels).map_err(e)?;
    fd_check("pretrain", &preds, &l.grads, &|p| {
        pretrain_loss(p, &labels).unwrap().value
    })?;

    let p: Vec<_> = (0..4).map(|_| random_map(&mut rng, 4)).collect();
    let l1: Vec<_> = (0..2).map(|_| random_label(&mut rng)).collect();
    let l2: Vec<_> = (0..2).map(|_| random_label(&mut rng)).collect();
    let pair = |m: &[Array2<f64>]| pairwise_source_loss(&m[0..2], &m[2..4], &l1, &l2).unwrap();
    let l = pair(&p);
    let grads: Vec<_> = l.grads1.iter().chain(&l.grads2).cloned().collect();
    fd_check("pairwise", &p, &grads, &|m| pair(m).value)?;

    let records: Vec<GeometricRecord> = [AugmentOp::TranslateX(1), AugmentOp::TranslateY(-1)]
        .iter()
        .map(|op| apply_chain(&Image::zeros((4, 4, 3)), &[*op]).1)
        .collect();
    for alignment in [Alignment::Realign, Alignment::Naive] {
        let cfg = LossConfig {
            alignment,
            stop_gradient_on_reference: false,
            ..Default::default()
        };
        let maps: Vec<_> = (0..3).map(|_| random_map(&mut rng, 4)).collect();
        let cons = |m: &[Array2<f64>]| consistency_loss(&m[0], &m[1..], &records, &cfg).unwrap();
        let l = cons(&maps);
        let mut grads = vec![l.grad_ref.clone()];
        grads.extend(l.grad_aug.iter().cloned());
        fd_check(&format!("consistency {alignment:?}"), &maps, &grads, &|m| {
            cons(m).value
        })?;

        let all: Vec<_> = p.iter().chain(&maps).cloned().collect();
        let cfg_t = LossConfig {
            stop_gradient_on_reference: false,
            alignment,
            ..Default::default()
        };
        let total = |m: &[Array2<f64>]| {
            let s = pairwise_source_loss(&m[0..2], &m[2..4], &l1, &l2)
                .unwrap()
                .value;
            let c = consistency_loss(&m[4], &m[5..], &records, &cfg_t)
                .unwrap()
                .value;
            total_loss(s, c).unwrap()
        };
        let ls = pair(&p);
        let lc = cons(&maps);
        let mut grads: Vec<_> = ls
            .grads1
            .iter()
            .chain(&ls.grads2)
            .map(|g| g * 0.5)
            .collect();
        grads.push(&lc.grad_ref * 0.5);
        grads.extend(lc.grad_aug.iter().map(|g| g * 0.5));
        fd_check(&format!("total {alignment:?}"), &all, &grads, &total)?;
    }
    Ok("pretrain, pairwise, consistency (realign, naive) and total within 1e-4".into())
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for streams in 2..=4 {
        let p = random_map(&mut rng, 4);
        let cfg = LossConfig {
            streams,
            ..Default::default()
        };
        let recs = vec![GeometricRecord::identity(4, 4); streams - 1];
        let c = consistency_loss(&p, &vec![p.clone(); streams - 1], &recs, &cfg)
            .map_err(|e| e.to_string())?;
        ensure(c.value == 0.0, format!("identical views give {}", c.value))?;
    }
    let sep_cfg = LossConfig {
        source_variant: SourceVariant::PairwiseSeparate,
        ..Default::default()
    };
    let mut violations = 0;
    for _ in 0..1000 {
        let p: Vec<_> = (0..2).map(|_| random_map(&mut rng, 4)).collect();
        let l: Vec<DepthMap> = (0..2)
            .map(|_| Array2::from_shape_fn((4, 4), |_| rng.random_range(1.0..20.0f32)))
            .collect();
        let sum = pairwise_source_loss(&p[0..1], &p[1..2], &l[0..1], &l[1..2])
            .unwrap()
            .value;
        let sep = source_loss(&sep_cfg, &p[0..1], &p[1..2], &l[0..1], &l[1..2])
            .unwrap()
            .value;
        if sum > sep + 1e-12 {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} triangle violations"))?;
    let rec = apply_chain(&Image::zeros((4, 4, 3)), &[AugmentOp::TranslateX(1)]).1;
    let cfg = LossConfig {
        streams: 2,
        ..Default::default()
    };
    let c = consistency_loss(
        &random_map(&mut rng, 4),
        &[random_map(&mut rng, 4)],
        &[rec],
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        c.value > 0.0 && c.grad_ref.iter().all(|g| *g == 0.0),
        "stop-gradient reference gradient",
    )?;
    Ok("identical views 0, 0/1000 violations, stop-gradient exact".into())
}

struct SeedRun {
    seed: u64,
    pretrained: f64,
    full: f64,
    consistency_only: f64,
}

fn toy_runs() -> Result<Vec<SeedRun>, String> {
    let e = |e: depthadapt_core::Error| e.to_string();
    let source = render_toy_samples(7, Domain::Source, 64, (64, 96)).map_err(e)?;
    let target_gt = render_toy_samples(7, Domain::Target, 64, (64, 96)).map_err(e)?;
    let target: Vec<DepthSample> = target_gt
        .iter()
        .map(|s| DepthSample {
            depth: DepthMap::zeros(s.depth.dim()),
            ..s.clone()
        })
        .collect();
    let eval = EvalConfig::default();
    let mut runs = Vec::new();
    for seed in 0..3u64 {
        let s = seed.to_string();
        let base = [
            ("train.model_seed", s.as_str()),
            ("train.data_seed", s.as_str()),
            ("train.augment_seed", s.as_str()),
        ];
        let run = RunConfig::from_pairs(base).map_err(e)?;
        let net = DepthNet::init(run.model, seed).map_err(e)?;
        let mut pre =
            Trainer::pretrain(net, source.clone(), TrainConfig::pretrain(&run)).map_err(e)?;
        pre.run().map_err(e)?;
        let pre = pre.into_net();
        let pretrained = evaluate(&pre, &target_gt, &eval).map_err(e)?.abs_rel;
        let adapted = |variant: &str| -> Result<f64, String> {
            let mut pairs = base.to_vec();
            pairs.push(("loss.source_variant", variant));
            let run = RunConfig::from_pairs(pairs).map_err(e)?;
            let mut t = Trainer::adapt(
                pre.clone(),
                source.clone(),
                target.clone(),
                TrainConfig::adapt(&run),
            )
            .map_err(e)?;
            t.run().map_err(e)?;
            Ok(evaluate(t.net(), &target_gt, &eval).map_err(e)?.abs_rel)
        };
        let full = adapted("pairwise_sum")?;
        let consistency_only = adapted("none")?;
        println!(
            "  seed {seed}: AbsRel pretrained {pretrained:.5} full {full:.5} consistency-only {consistency_only:.5}"
        );
        runs.push(SeedRun {
            seed,
            pretrained,
            full,
            consistency_only,
        });
    }
    Ok(runs)
}

fn criterion_5(runs: &[SeedRun]) -> Verdict {
    let gains: Vec<f64> = runs.iter().map(|r| 1.0 - r.full / r.pretrained).collect();
    let detail = runs
        .iter()
        .zip(&gains)
        .map(|(r, g)| format!("seed {} {:+.2}%", r.seed, 100.0 * g))
        .collect::<Vec<_>>()
        .join(", ");
    let improved = gains.iter().filter(|g| **g >= 0.05).count();
    let msg = format!("relative AbsRel improvement {detail}; {improved}/3 seeds >= 5%");
    if improved >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_6(runs: &[SeedRun]) -> Verdict {
    let full = median(runs.iter().map(|r| r.full).collect());
    let cons = median(runs.iter().map(|r| r.consistency_only).collect());
    let pre = median(runs.iter().map(|r| r.pretrained).collect());
    let leq = |a: f64, b: f64| a <= b * 1.01;
    let msg =
        format!("median AbsRel full {full:.5}, consistency-only {cons:.5}, pretrained {pre:.5}");
    if leq(full, cons) && leq(cons, pre) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Verdict {
    let e = |e: depthadapt_core::Error| e.to_string();
    let table = [
        ("7/4", 216.83),
        ("9/2", 198.83),
        ("6/5", 219.29),
        ("8/15", 210.15),
        ("2/1", 170.73),
    ];
    let pick = select_by_scores(&table).map_err(e)?;
    ensure(pick == "2/1", format!("selected {pick}"))?;
    let run = RunConfig::from_pairs(Vec::<(String, String)>::new()).map_err(e)?;
    let images: Vec<Image> = render_toy_samples(7, Domain::Target, 4, (64, 96))
        .map_err(e)?
        .into_iter()
        .map(|s| s.image)
        .collect();
    let mut constant = DepthNet::init(run.model, 0).map_err(e)?;
    let head = run.model.head_conv();
    constant.convs_mut()[head]
        .weight
        .iter_mut()
        .for_each(|w| *w = 0.0);
    let before = constant.checksum();
    let zero = uncertainty_score(&constant, &images).map_err(e)?.value;
    ensure(zero == 0.0, format!("constant model scores {zero}"))?;
    let live = DepthNet::init(run.model, 1).map_err(e)?;
    let live_before = live.checksum();
    let score = uncertainty_score(&live, &images).map_err(e)?.value;
    ensure(
        constant.checksum() == before && live.checksum() == live_before,
        "scoring changed parameters",
    )?;
    Ok(format!(
        "selected 2/1, constant model 0, fresh model {score:.3}, checksums unchanged"
    ))
}

fn criterion_8() -> Verdict {
    const CASES: u32 = 200;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let fill = |v: f32, d: f32| {
        DepthSample::new(
            "c",
            Domain::Source,
            Image::from_elem((64, 96, 3), v),
            DepthMap::from_elem((64, 96), d),
        )
        .unwrap()
    };
    let (a, b) = (fill(0.2, 10.0), fill(0.8, 30.0));
    runner
        .run(&any::<u64>(), |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, patch) = cutmix_with_box(&a, &b, 0.5, &mut rng).unwrap();
            for ((y, x), d) in out.depth.indexed_iter() {
                let inside = patch.contains(y, x);
                prop_assert_eq!(*d == 30.0, inside);
                prop_assert!(*d == 10.0 || *d == 30.0);
                for c in 0..3 {
                    prop_assert_eq!(out.image[[y, x, c]] == 0.8, inside);
                }
            }
            let frac = patch.area() as f64 / (64.0 * 96.0);
            prop_assert!((0.45..=0.55).contains(&frac), "fraction {}", frac);
            Ok(())
        })
        .map_err(|e| format!("cutmix: {e}"))?;
    runner
        .run(
            &(any::<u64>(), 0usize..4, 0.0f32..=10.0, any::<bool>()),
            |(seed, n, m, cutout)| {
                let policy = RandAugmentPolicy {
                    set: AugmentSet::Geo,
                    n,
                    m,
                    static_cutout: cutout,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = Image::from_shape_fn((20, 28, 3), |_| rng.random::<f32>());
                let (_, rec) = rand_augment(&img, &policy, &mut rng).unwrap();
                prop_assert!(rec.is_identity());
                Ok(())
            },
        )
        .map_err(|e| format!("s_geo: {e}"))?;
    runner
        .run(
            &(any::<u64>(), -6i32..=6, any::<bool>()),
            |(seed, k, vertical)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = Image::from_shape_fn((16, 20, 3), |_| rng.random::<f32>());
                let op = if vertical {
                    AugmentOp::TranslateY(k)
                } else {
                    AugmentOp::TranslateX(k)
                };
                let (aug, rec) = apply_chain(&img, &[op]);
                for c in 0..3 {
                    let plane = aug.index_axis(Axis(2), c).to_owned();
                    let (back, mask) = realign_prediction(&plane, &rec).unwrap();
                    let valid = mask.iter().filter(|m| **m).count();
                    let (dy, dx) = if vertical {
                        (k.unsigned_abs() as usize, 0)
                    } else {
                        (0, k.unsigned_abs() as usize)
                    };
                    prop_assert_eq!(valid, (16 - dy) * (20 - dx));
                    for ((y, x), m) in mask.indexed_iter() {
                        if *m {
                            prop_assert_eq!(back[[y, x]], img[[y, x, c]]);
                        }
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| format!("translation: {e}"))?;
    Ok(format!("{} property cases", 3 * CASES))
}

fn criterion_9() -> Verdict {
    let e = |e: depthadapt_core::Error| e.to_string();
    let source = render_toy_samples(7, Domain::Source, 16, (64, 96)).map_err(e)?;
    let target: Vec<DepthSample> = render_toy_samples(7, Domain::Target, 16, (64, 96))
        .map_err(e)?
        .into_iter()
        .map(|s| DepthSample {
            depth: DepthMap::zeros(s.depth.dim()),
            ..s
        })
        .collect();
    let run = RunConfig::from_pairs(Vec::<(String, String)>::new()).map_err(e)?;
    let pretrain_once = || -> Result<DepthNet, String> {
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::pretrain(&run)
        };
        let net = DepthNet::init(run.model, run.train.model_seed).map_err(e)?;
        let mut t = Trainer::pretrain(net, source.clone(), cfg).map_err(e)?;
        t.run().map_err(e)?;
        Ok(t.into_net())
    };
    let pre = pretrain_once()?;
    ensure(
        pre.checksum() == pretrain_once()?.checksum(),
        "pretrain checksums differ",
    )?;
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::adapt(&run)
    };
    let make =
        || Trainer::adapt(pre.clone(), source.clone(), target.clone(), cfg.clone()).map_err(e);
    let adapt_once = || -> Result<String, String> {
        let mut t = make()?;
        t.run().map_err(e)?;
        Ok(t.net().checksum())
    };
    let adapted = adapt_once()?;
    ensure(adapted == adapt_once()?, "adapt checksums differ")?;

    let long = TrainConfig {
        epochs: 4,
        ..cfg.clone()
    };
    let make =
        || Trainer::adapt(pre.clone(), source.clone(), target.clone(), long.clone()).map_err(e);
    let k = 2;
    let mut first = make()?;
    for _ in 0..k {
        first.step().map_err(e)?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ckpt");
    first.checkpoint().save(&path).map_err(e)?;
    let mut resumed = make()?
        .resume_from(&Checkpoint::load(&path).map_err(e)?)
        .map_err(e)?;
    resumed.step().map_err(e)?;
    let mut straight = make()?;
    for _ in 0..=k {
        straight.step().map_err(e)?;
    }
    ensure(
        resumed.net().checksum() == straight.net().checksum(),
        "resume diverged at step k+1",
    )?;
    Ok(format!(
        "pretrain and adapt checksums repeat, resume equal at step {}",
        k + 1
    ))
}

fn main() {
    let mut hard_failures = Vec::new();
    let mut exact = |id: u8, name: &str, f: fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        report(id, name, t, &v);
        if v.is_err() {
            hard_failures.push(id);
        }
    };
    exact(1, "batch composition", criterion_1);
    exact(2, "metric oracle", criterion_2);
    exact(3, "gradient correctness", criterion_3);
    exact(4, "loss identities", criterion_4);

    let t = Instant::now();
    match toy_runs() {
        Ok(runs) => {
            report(
                5,
                "toy adaptation improves over pretraining",
                t,
                &criterion_5(&runs),
            );
            report(6, "ablation ordering", t, &criterion_6(&runs));
        }
        Err(err) => {
            let v = Err(err);
            report(5, "toy adaptation improves over pretraining", t, &v);
            report(6, "ablation ordering", t, &v);
        }
    }

    exact(7, "uncertainty selection", criterion_7);
    exact(8, "augmentation invariants", criterion_8);
    exact(9, "determinism", criterion_9);
    if !hard_failures.is_empty() {
        eprintln!("failed criteria {hard_failures:?}");
        std::process::exit(1);
    }
}
