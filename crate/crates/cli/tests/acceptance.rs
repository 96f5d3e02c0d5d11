//! Acceptance suite: eleven end-to-end criteria covering gradients, the
//! prompt pathway, losses, hydrology, metrics, mosaicking, the desk-scale
//! improvement benchmarks, the scene classifier, and pipeline determinism.
//!
//! Runs as a plain binary (harness = false) so it can print exactly one
//! PASS/FAIL line per criterion and exit nonzero if any fail.

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use p2d_core::autodiff::gradcheck::check_scalar_fn;
use p2d_core::autodiff::{Adam, AdamConfig, Tensor};
use p2d_core::hydro::{self, StreamMask, D8_NEIGHBORS};
use p2d_core::model::{normalize_io, ModelConfig, PromptNet, VitEncoder, WeightStore};
use p2d_core::mosaic::BlendAccumulator;
use p2d_core::raster::{self, RasterGrid};
use p2d_core::rng;
use p2d_core::terrain::{self, SceneClass, TerrainParams};
use p2d_core::train::{self, edge_loss, PromptKind, PromptSpec, TrainConfig};
use p2d_core::{eval, train::ClassifierTrainConfig};

const GRAD_TOL: f64 = 1e-6;
const GRAD_H: f64 = 1e-3;

fn run<T>(
    failed: &mut usize,
    num: usize,
    name: &str,
    f: impl FnOnce() -> Result<(T, String), String>,
) -> Option<T> {
    let t0 = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(f));
    let (line, value) = match outcome {
        Ok(Ok((value, detail))) => (format!("PASS — {detail}"), Some(value)),
        Ok(Err(msg)) => {
            *failed += 1;
            (format!("FAIL — {msg}"), None)
        }
        Err(p) => {
            *failed += 1;
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".to_string());
            (format!("FAIL — panicked: {msg}"), None)
        }
    };
    println!(
        "criterion {num:>2} [{name}]: {line} ({:.1}s)",
        t0.elapsed().as_secs_f64()
    );
    value
}

/// Adapter for criteria that only produce a detail string.
fn plain(f: impl FnOnce() -> Result<String, String>) -> impl FnOnce() -> Result<((), String), String> {
    || f().map(|d| ((), d))
}

fn main() {
    let mut failed = 0usize;
    let n = &mut failed;
    run(n, 1, "gradient correctness", plain(criterion_1));
    run(n, 2, "zero-init prompt invariance", plain(criterion_2));
    run(n, 3, "loss contract", plain(criterion_3));
    run(n, 4, "hydrology oracle equivalence", plain(criterion_4));
    run(n, 5, "metric formula exactness", plain(criterion_5));
    run(n, 6, "mosaic seamlessness", plain(criterion_6));

    // criterion 7 trains the per-class models that 8 and 9 reuse
    let stores = run(n, 7, "per-class improvement benchmark", criterion_7);
    match &stores {
        Some(s) => {
            run(n, 8, "stream-network IoU", plain(|| {
                criterion_8(&s[SceneClass::Vegetated.index()])
            }));
            run(n, 9, "void-filling region restriction", plain(|| {
                criterion_9(&s[SceneClass::Urban.index()])
            }));
        }
        None => {
            for (num, name) in [(8, "stream-network IoU"), (9, "void-filling region restriction")] {
                *n += 1;
                println!("criterion {num:>2} [{name}]: FAIL — skipped, criterion 7 models unavailable");
            }
        }
    }
    run(n, 10, "scene classifier macro F1", plain(criterion_10));
    run(n, 11, "pipeline determinism", plain(criterion_11));

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}

// ---------------------------------------------------------------- shared ---

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed, 77);
    (0..n).map(|_| rng::normal(&mut r)).collect()
}

/// Random values bounded away from relu/abs kinks so h=1e-3 stays one-sided.
fn rand_off_kink(n: usize, seed: u64) -> Vec<f64> {
    rand_vec(n, seed)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect()
}

/// Weighted sum collapsing a tensor to a scalar with distinct per-element
/// sensitivities, so a wrong gradient anywhere shows up.
fn wsum(t: &Tensor<f64>) -> Tensor<f64> {
    let n = t.len();
    let w = Tensor::from_vec(
        &t.shape(),
        (0..n).map(|i| 0.05 * (i as f64 + 1.0)).collect(),
    );
    t.mul(&w).unwrap().sum()
}

/// Toy network small enough for finite differencing through the full model.
fn toy_config() -> ModelConfig {
    ModelConfig {
        input_size: 8,
        vit_patch: 4,
        embed_dim: 4,
        depth: 4,
        heads: 2,
        decoder_channels: [2; 4],
        ..ModelConfig::default()
    }
}

/// Benchmark model used by criteria 7–9 (also the configuration whose
/// margins the suite was sized around).
fn bench_model() -> ModelConfig {
    ModelConfig {
        input_size: 64,
        vit_patch: 8,
        embed_dim: 32,
        depth: 4,
        heads: 4,
        decoder_channels: [16; 4],
        ..ModelConfig::default()
    }
}

fn bench_spec(kind: PromptKind) -> PromptSpec {
    PromptSpec {
        factor: 8,
        bias_sigma: 2.0,
        canopy_bias: 3.0,
        ..PromptSpec::new(kind)
    }
}

fn bench_train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs,
        seed: 42,
        train_samples: 200,
        val_samples: 0,
        model: bench_model(),
        terrain: TerrainParams::default(),
        ..TrainConfig::default()
    }
}

fn net_from(store: &WeightStore) -> PromptNet<f32> {
    let mut dummy = rng::seeded(0, 0);
    let net = PromptNet::<f32>::new(&mut dummy, bench_model()).expect("valid config");
    net.load_store(store).expect("store matches config");
    net
}

/// Denormalized elevation prediction for one tile.
fn predict(net: &PromptNet<f32>, rgb: &[f32], prompt: &RasterGrid, size: usize) -> RasterGrid {
    let (np, _, rec) = normalize_io(prompt, None).unwrap();
    let pt = Tensor::from_vec(&[1, np.rows, np.cols], np.values.clone());
    let rgb_t = Tensor::from_vec(&[3, size, size], rgb.to_vec());
    let pred = net.forward(&rgb_t, Some(&pt)).unwrap();
    let values: Vec<f32> = pred
        .value()
        .iter()
        .map(|&v| rec.denormalize(v as f64) as f32)
        .collect();
    RasterGrid::constant(size, size, 0.0).like(values)
}

fn rmse_masked(a: &[f32], b: &[f32], mask: Option<&[bool]>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if mask.map(|m| m[i]).unwrap_or(true) {
            s += ((a[i] - b[i]) as f64).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

// --------------------------------------------------- 1: gradient checks ---

fn criterion_1() -> Result<String, String> {
    let t0 = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut check = |name: &str, seed: u64, err: f64| -> Result<(), String> {
        if err > worst.0 {
            worst = (err, format!("{name}#{seed}"));
        }
        if err > GRAD_TOL {
            Err(format!("{name} seed {seed}: max rel err {err:.3e} > {GRAD_TOL:.0e}"))
        } else {
            Ok(())
        }
    };

    for seed in 0..5u64 {
        let x12 = rand_off_kink(12, seed);
        let other = Tensor::from_vec(&[3, 4], rand_off_kink(12, seed + 100));

        type Op<'a> = (&'static str, Box<dyn Fn(&Tensor<f64>) -> Tensor<f64> + 'a>);
        let unary: Vec<Op> = vec![
            ("relu", Box::new(|t| t.relu())),
            ("gelu", Box::new(|t| t.gelu())),
            ("abs", Box::new(|t| t.abs())),
            ("scale", Box::new(|t| t.scale(-1.7))),
            ("add_scalar", Box::new(|t| t.add_scalar(0.3))),
            ("softmax", Box::new(|t| t.softmax())),
            ("layer_norm", Box::new(|t| t.layer_norm(1e-6))),
            ("add_lhs", Box::new(|t| t.add(&other).unwrap())),
            ("sub_lhs", Box::new(|t| t.sub(&other).unwrap())),
            ("mul_lhs", Box::new(|t| t.mul(&other).unwrap())),
            ("add_rhs", Box::new(|t| other.add(t).unwrap())),
            ("sub_rhs", Box::new(|t| other.sub(t).unwrap())),
            ("mul_rhs", Box::new(|t| other.mul(t).unwrap())),
            ("reshape", Box::new(|t| t.reshape(&[2, 6]).unwrap())),
            ("transpose", Box::new(|t| t.transpose().unwrap())),
            ("crop", Box::new(|t| t.crop(&[1, 1], &[2, 2]).unwrap())),
            (
                "concat_ax0",
                Box::new(|t| Tensor::concat(&[t.clone(), other.clone()], 0).unwrap()),
            ),
            (
                "concat_ax1",
                Box::new(|t| Tensor::concat(&[other.clone(), t.clone()], 1).unwrap()),
            ),
        ];
        for (name, op) in &unary {
            let err = check_scalar_fn::<f64, _>(
                |xs| {
                    let t = Tensor::param(&[3, 4], xs.to_vec());
                    (t.clone(), wsum(&op(&t)))
                },
                &x12,
                GRAD_H,
            );
            check(name, seed, err)?;
        }

        // reductions straight to scalar
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[3, 4], xs.to_vec());
                (t.clone(), t.sum())
            },
            &x12,
            GRAD_H,
        );
        check("sum", seed, err)?;
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[3, 4], xs.to_vec());
                (t.clone(), t.mean())
            },
            &x12,
            GRAD_H,
        );
        check("mean", seed, err)?;

        // matmul, both operands
        let m = Tensor::from_vec(&[4, 2], rand_vec(8, seed + 200));
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[3, 4], xs.to_vec());
                (t.clone(), wsum(&t.matmul(&m).unwrap()))
            },
            &x12,
            GRAD_H,
        );
        check("matmul_lhs", seed, err)?;
        let lhs = Tensor::from_vec(&[3, 4], rand_vec(12, seed + 201));
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[4, 2], xs.to_vec());
                (t.clone(), wsum(&lhs.matmul(&t).unwrap()))
            },
            &rand_vec(8, seed + 202),
            GRAD_H,
        );
        check("matmul_rhs", seed, err)?;

        // row broadcasts, both operands
        let row = Tensor::from_vec(&[4], rand_off_kink(4, seed + 300));
        for (name, f) in [
            ("mul_row_lhs", true),
            ("add_row_lhs", false),
        ] {
            let err = check_scalar_fn::<f64, _>(
                |xs| {
                    let t = Tensor::param(&[3, 4], xs.to_vec());
                    let out = if f { t.mul_row(&row) } else { t.add_row(&row) };
                    (t.clone(), wsum(&out.unwrap()))
                },
                &x12,
                GRAD_H,
            );
            check(name, seed, err)?;
        }
        let mat = Tensor::from_vec(&[3, 4], rand_vec(12, seed + 301));
        for (name, f) in [("mul_row_rhs", true), ("add_row_rhs", false)] {
            let err = check_scalar_fn::<f64, _>(
                |xs| {
                    let t = Tensor::param(&[4], xs.to_vec());
                    let out = if f { mat.mul_row(&t) } else { mat.add_row(&t) };
                    (t.clone(), wsum(&out.unwrap()))
                },
                &rand_off_kink(4, seed + 302),
                GRAD_H,
            );
            check(name, seed, err)?;
        }

        // conv2d wrt input, weight, and bias
        let cw = Tensor::from_vec(&[3, 2, 3, 3], rand_vec(54, seed + 400));
        let cb = Tensor::from_vec(&[3], rand_vec(3, seed + 401));
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[2, 4, 4], xs.to_vec());
                (t.clone(), wsum(&t.conv2d(&cw, Some(&cb), 1, 1).unwrap()))
            },
            &rand_vec(32, seed + 402),
            GRAD_H,
        );
        check("conv2d_input", seed, err)?;
        let cx = Tensor::from_vec(&[2, 4, 4], rand_vec(32, seed + 403));
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[3, 2, 3, 3], xs.to_vec());
                (t.clone(), wsum(&cx.conv2d(&t, Some(&cb), 1, 1).unwrap()))
            },
            &rand_vec(54, seed + 404),
            GRAD_H,
        );
        check("conv2d_weight", seed, err)?;
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[3], xs.to_vec());
                (t.clone(), wsum(&cx.conv2d(&cw, Some(&t), 2, 0).unwrap()))
            },
            &rand_vec(3, seed + 405),
            GRAD_H,
        );
        check("conv2d_bias", seed, err)?;

        // resampling
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[1, 3, 3], xs.to_vec());
                (t.clone(), wsum(&t.bilinear_resize(5, 5).unwrap()))
            },
            &rand_vec(9, seed + 500),
            GRAD_H,
        );
        check("bilinear_up", seed, err)?;
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[1, 4, 4], xs.to_vec());
                (t.clone(), wsum(&t.bilinear_resize(2, 2).unwrap()))
            },
            &rand_vec(16, seed + 501),
            GRAD_H,
        );
        check("bilinear_down", seed, err)?;
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let t = Tensor::param(&[2, 4, 4], xs.to_vec());
                (t.clone(), wsum(&t.avg_pool(2).unwrap()))
            },
            &rand_vec(32, seed + 502),
            GRAD_H,
        );
        check("avg_pool", seed, err)?;

        // composed attention block: grad of a depth-1 encoder wrt its input
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let mut r = rng::seeded(1000 + seed, 0);
                let enc = VitEncoder::<f64>::new(&mut r, 4, 1, 2, 4, 1, 2);
                let rgb = Tensor::param(&[1, 4, 4], xs.to_vec());
                let feats = enc.encode(&rgb).unwrap();
                (rgb, wsum(feats.last().unwrap()))
            },
            &rand_vec(16, seed + 600),
            GRAD_H,
        );
        check("attention_block", seed, err)?;

        // DPT fusion stage: grad of the full forward wrt one stage's fuse
        // convolution, with a live prompt pathway feeding that stage
        let rgb_vals: Vec<f64> = rand_vec(3 * 8 * 8, seed + 700);
        let prompt_vals: Vec<f64> = rand_vec(9, seed + 701);
        let activate_prompt = |net: &PromptNet<f64>, seed: u64| {
            let mut pr = rng::seeded(2000 + seed, 0);
            for (name, t) in net.params() {
                if name.contains(".prompt.proj_") {
                    let n = t.len();
                    t.set_data((0..n).map(|_| rng::normal(&mut pr) * 0.05).collect());
                }
            }
        };
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let mut r = rng::seeded(3000 + seed, 0);
                let net = PromptNet::<f64>::new(&mut r, toy_config()).unwrap();
                activate_prompt(&net, seed);
                let fuse = net
                    .params()
                    .into_iter()
                    .find(|(n, _)| n == "decoder.stage1.fuse_w")
                    .expect("stage1 fuse weights exist")
                    .1;
                fuse.set_data(xs.to_vec());
                let rgb = Tensor::from_vec(&[3, 8, 8], rgb_vals.clone());
                let prompt = Tensor::from_vec(&[1, 3, 3], prompt_vals.clone());
                let out = net.forward(&rgb, Some(&prompt)).unwrap();
                (fuse, wsum(&out))
            },
            &rand_vec(36, seed + 702)
                .iter()
                .map(|v| v * 0.1)
                .collect::<Vec<_>>(),
            GRAD_H,
        );
        check("dpt_fusion_stage", seed, err)?;

        // prompt injection: grad of the full forward wrt the prompt raster
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let mut r = rng::seeded(4000 + seed, 0);
                let net = PromptNet::<f64>::new(&mut r, toy_config()).unwrap();
                activate_prompt(&net, seed);
                let rgb = Tensor::from_vec(&[3, 8, 8], rgb_vals.clone());
                let prompt = Tensor::param(&[1, 3, 3], xs.to_vec());
                let out = net.forward(&rgb, Some(&prompt)).unwrap();
                (prompt, wsum(&out))
            },
            &rand_vec(9, seed + 703),
            GRAD_H,
        );
        check("prompt_fusion_inject", seed, err)?;

        // edge loss: the prediction offset keeps |d| and its forward
        // differences bounded away from the absolute-value kinks
        let target: Vec<f64> = rand_vec(16, seed + 800);
        let x0: Vec<f64> = (0..16)
            .map(|k| {
                let (r, c) = (k / 4, k % 4);
                target[k] + 0.5 + 0.3 * c as f64 + 0.2 * r as f64 + 0.01 * (k as f64).sin()
            })
            .collect();
        let err = check_scalar_fn::<f64, _>(
            |xs| {
                let gt = Tensor::from_vec(&[1, 4, 4], target.clone());
                let pred = Tensor::param(&[1, 4, 4], xs.to_vec());
                let loss = edge_loss(&gt, &pred, 0.9).unwrap();
                (pred, loss)
            },
            &x0,
            GRAD_H,
        );
        check("edge_loss", seed, err)?;
    }

    let elapsed = t0.elapsed().as_secs_f64();
    if elapsed > 120.0 {
        return Err(format!("runtime {elapsed:.1}s exceeds 2 min budget"));
    }
    Ok(format!(
        "all primitives + attention, fusion stage, prompt inject, edge loss; worst rel err {:.2e} ({})",
        worst.0, worst.1
    ))
}

// ------------------------------------------- 2: zero-init prompt freedom ---

fn criterion_2() -> Result<String, String> {
    let cfg = ModelConfig {
        input_size: 16,
        vit_patch: 4,
        embed_dim: 8,
        depth: 4,
        heads: 2,
        decoder_channels: [4; 4],
        ..ModelConfig::default()
    };
    let mut r = rng::seeded(42, 0);
    let net = PromptNet::<f32>::new(&mut r, cfg).map_err(|e| format!("{e:?}"))?;
    let mut dr = rng::seeded(43, 0);
    let rgb = Tensor::from_vec(
        &[3, 16, 16],
        (0..3 * 256).map(|_| rng::normal(&mut dr) as f32).collect(),
    );
    let rand_prompt = |dr: &mut rng::Rng| {
        Tensor::from_vec(
            &[1, 4, 4],
            (0..16).map(|_| rng::normal(dr) as f32).collect(),
        )
    };
    let mut pairs = Vec::new();
    for k in 0..10 {
        let p1 = rand_prompt(&mut dr);
        let p2 = rand_prompt(&mut dr);
        let o1 = net.forward(&rgb, Some(&p1)).unwrap().value();
        let o2 = net.forward(&rgb, Some(&p2)).unwrap().value();
        if o1 != o2 {
            return Err(format!(
                "pair {k}: outputs differ at zero-initialized prompt projection"
            ));
        }
        pairs.push((p1, p2));
    }

    // one optimizer step must bring the prompt pathway to life
    let target = Tensor::from_vec(
        &[1, 16, 16],
        (0..256).map(|_| rng::normal(&mut dr) as f32).collect(),
    );
    let pred = net.forward(&rgb, Some(&pairs[0].0)).unwrap();
    let loss = edge_loss(&target, &pred, 0.9).unwrap();
    loss.backward().map_err(|e| format!("{e}"))?;
    let mut opt = Adam::new(
        net.param_tensors(),
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    opt.step().map_err(|e| e.to_string())?;
    let (p1, p2) = &pairs[1];
    let o1 = net.forward(&rgb, Some(p1)).unwrap().value();
    let o2 = net.forward(&rgb, Some(p2)).unwrap().value();
    if o1 == o2 {
        return Err("prompt pathway still inert after one training step".into());
    }
    Ok("10 prompt pairs bit-identical at init; pathway live after 1 step".into())
}

// ------------------------------------------------------- 3: loss contract ---

fn criterion_3() -> Result<String, String> {
    // identical inputs: zero loss exactly
    let e = Tensor::from_vec(&[1, 4, 4], rand_vec(16, 30));
    let zero = edge_loss(&e, &e, 0.9).unwrap().item();
    if zero != 0.0 {
        return Err(format!("edge_loss(E, E) = {zero:e}, expected exactly 0"));
    }

    // lambda = 0 is the mean absolute error, bit for bit (4x4 grid, so the
    // 1/16 normalizer is exact in binary floating point)
    for seed in 0..5u64 {
        let gt = rand_vec(16, 100 + seed);
        let pr = rand_vec(16, 200 + seed);
        let loss = edge_loss(
            &Tensor::from_vec(&[1, 4, 4], gt.clone()),
            &Tensor::from_vec(&[1, 4, 4], pr.clone()),
            0.0,
        )
        .unwrap()
        .item();
        let mae = pr
            .iter()
            .zip(&gt)
            .fold(0.0f64, |acc, (&p, &g)| acc + (p - g).abs())
            * (1.0 / 16.0);
        if loss != mae {
            return Err(format!(
                "seed {seed}: lambda=0 loss {loss:e} != MAE {mae:e}"
            ));
        }
    }

    // constant offset c = -0.75: every forward difference of d is exactly
    // zero, so the edge term vanishes and the loss is |c| in both regimes
    let c = -0.75f64;
    let gt = Tensor::from_vec(&[1, 4, 4], rand_vec(16, 300));
    let pr = Tensor::from_vec(
        &[1, 4, 4],
        gt.value().iter().map(|&v| v + c).collect::<Vec<_>>(),
    );
    let l1 = edge_loss(&gt, &pr, 0.0).unwrap().item();
    let full = edge_loss(&gt, &pr, 0.9).unwrap().item();
    if full - l1 != 0.0 {
        return Err(format!("edge term {:e} for constant offset, expected 0", full - l1));
    }
    if l1 != c.abs() {
        return Err(format!("L1 term {l1:e}, expected |c| = {}", c.abs()));
    }
    Ok("edge_loss(E,E)=0; lambda=0 == MAE bit-exact; constant offset -> edge term 0, L1 = |c|".into())
}

// ------------------------------------------------- 4: hydrology oracle ---

fn oracle_receiver(dirs: &hydro::FlowDirections, idx: usize) -> Option<usize> {
    let code = dirs.codes[idx];
    if code == 0 {
        return None;
    }
    let (r, c) = (idx / dirs.cols, idx % dirs.cols);
    let &(_, dr, dc, _) = D8_NEIGHBORS.iter().find(|&&(k, ..)| k == code)?;
    let (nr, nc) = (r as isize + dr, c as isize + dc);
    if nr < 0 || nc < 0 || nr as usize >= dirs.rows || nc as usize >= dirs.cols {
        return None;
    }
    let n = nr as usize * dirs.cols + nc as usize;
    dirs.valid[n].then_some(n)
}

fn criterion_4() -> Result<String, String> {
    let t0 = Instant::now();
    for case in 0..100u64 {
        let mut r = rng::seeded(4040, case);
        let values: Vec<f32> = (0..64).map(|_| (rng::normal(&mut r) * 5.0) as f32).collect();
        let dem = RasterGrid::constant(8, 8, 0.0).like(values);
        let filled = hydro::fill_depressions(&dem).map_err(|e| format!("{e}"))?;

        // idempotence: refilling changes nothing, bit for bit
        let refilled = hydro::fill_depressions(&filled).map_err(|e| format!("{e}"))?;
        if refilled.values != filled.values {
            return Err(format!("case {case}: fill not idempotent"));
        }

        let dirs = hydro::d8_flow_direction(&filled);
        // acyclicity: every downstream walk terminates within n steps
        for start in 0..64 {
            if !dirs.valid[start] {
                continue;
            }
            let mut cur = Some(start);
            let mut steps = 0;
            while let Some(i) = cur {
                cur = oracle_receiver(&dirs, i);
                steps += 1;
                if steps > 64 {
                    return Err(format!("case {case}: cycle from cell {start}"));
                }
            }
        }

        // brute-force path following: each cell donates +1 to every cell
        // strictly downstream of it
        let mut oracle = vec![0u32; 64];
        for start in 0..64 {
            if !dirs.valid[start] {
                continue;
            }
            let mut cur = oracle_receiver(&dirs, start);
            while let Some(i) = cur {
                oracle[i] += 1;
                cur = oracle_receiver(&dirs, i);
            }
        }
        let acc = hydro::flow_accumulation(&dirs).map_err(|e| format!("{e}"))?;
        if acc.counts != oracle {
            return Err(format!("case {case}: accumulation disagrees with oracle"));
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    if elapsed > 60.0 {
        return Err(format!("runtime {elapsed:.1}s exceeds 1 min budget"));
    }
    Ok("100 random 8x8 DEMs: oracle-exact accumulation, idempotent fill, acyclic".into())
}

// ------------------------------------------------ 5: metric exactness ---

fn criterion_5() -> Result<String, String> {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;

    let truth = RasterGrid::constant(2, 2, 0.0).like(vec![1.0, 2.0, 3.0, 4.0]);
    let pred = RasterGrid::constant(2, 2, 0.0).like(vec![1.5, 2.0, 2.0, 6.0]);
    let mae = eval::mae(&truth, &pred, None).unwrap();
    let rmse = eval::rmse(&truth, &pred, None).unwrap();
    // errors 0.5, 0, 1, 2 -> MAE 0.875, RMSE sqrt(21/16)
    if !close(mae, 0.875) {
        return Err(format!("MAE {mae} != 0.875"));
    }
    if !close(rmse, (21.0f64 / 16.0).sqrt()) {
        return Err(format!("RMSE {rmse} != sqrt(21/16)"));
    }

    // 3x3 masks with tp=2, fp=1, fn=1, tn=5
    let pm = StreamMask {
        rows: 3,
        cols: 3,
        mask: vec![true, true, true, false, false, false, false, false, false],
    };
    let tm = StreamMask {
        rows: 3,
        cols: 3,
        mask: vec![true, true, false, true, false, false, false, false, false],
    };
    let m = hydro::segmentation_metrics(&pm, &tm).unwrap();
    if (m.tp, m.fp, m.fn_) != (2, 1, 1) {
        return Err(format!("confusion ({}, {}, {}) != (2, 1, 1)", m.tp, m.fp, m.fn_));
    }
    let two_thirds = 2.0 / 3.0;
    for (name, got, want) in [
        ("IoU", m.iou, 0.5),
        ("precision", m.precision, two_thirds),
        ("recall", m.recall, two_thirds),
        ("F1", m.f1, two_thirds),
    ] {
        if !close(got, want) {
            return Err(format!("{name} {got} != {want}"));
        }
    }
    let total = 9.0;
    let tn = total - (m.tp + m.fp + m.fn_) as f64;
    let accuracy = (m.tp as f64 + tn) / total;
    if !close(accuracy, 7.0 / 9.0) {
        return Err(format!("accuracy {accuracy} != 7/9"));
    }

    // RMSE dominates MAE on random data
    for case in 0..1000u64 {
        let mut r = rng::seeded(5050, case);
        let t: Vec<f32> = (0..16).map(|_| rng::normal(&mut r) as f32).collect();
        let p: Vec<f32> = (0..16).map(|_| rng::normal(&mut r) as f32).collect();
        let tg = RasterGrid::constant(4, 4, 0.0).like(t);
        let pg = RasterGrid::constant(4, 4, 0.0).like(p);
        let mae = eval::mae(&tg, &pg, None).unwrap();
        let rmse = eval::rmse(&tg, &pg, None).unwrap();
        if rmse < mae - 1e-12 {
            return Err(format!("case {case}: RMSE {rmse} < MAE {mae}"));
        }
    }
    Ok("hand fixtures match to 1e-9; RMSE >= MAE on 1000 random pairs".into())
}

// ---------------------------------------------- 6: mosaic seamlessness ---

fn mosaic_of(field: &RasterGrid, offsets: &[f32]) -> RasterGrid {
    let plan = raster::make_tile_plan(field, 64, 16).unwrap();
    let mut acc = BlendAccumulator::new(field);
    for (k, &(r0, c0)) in plan.placements.iter().enumerate() {
        let mut tile = raster::extract_tile(field, (r0, c0), 64).unwrap();
        let off = offsets.get(k).copied().unwrap_or(0.0);
        tile = tile.like(tile.values.iter().map(|&v| v + off).collect());
        acc.accumulate_patch(&tile, r0, c0).unwrap();
    }
    acc.finalize()
}

fn criterion_6() -> Result<String, String> {
    // globally linear field: blending agreeing tiles reproduces it
    let linear = RasterGrid::constant(100, 100, 0.0).like(
        (0..10_000)
            .map(|k| 0.3 * (k / 100) as f32 + 0.2 * (k % 100) as f32 + 5.0)
            .collect(),
    );
    let out = mosaic_of(&linear, &[]);
    let max_err = out
        .values
        .iter()
        .zip(&linear.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    if max_err >= 1e-4 {
        return Err(format!("linear field max abs error {max_err:e} >= 1e-4"));
    }

    // constant field reproduces exactly
    let constant = RasterGrid::constant(100, 100, 7.25);
    let out = mosaic_of(&constant, &[]);
    if out.values != constant.values {
        return Err("constant field not reproduced bit-exactly".into());
    }

    // smooth field with small per-tile constant offsets: the blend must not
    // leave a visible seam, measured by second differences across the
    // overlap bands vs the tile interiors
    let smooth = RasterGrid::constant(100, 100, 0.0).like(
        (0..10_000)
            .map(|k| {
                let (r, c) = ((k / 100) as f64, (k % 100) as f64);
                (8.0 * (0.21 * r).sin() + 6.0 * (0.17 * c).cos()) as f32
            })
            .collect(),
    );
    let out = mosaic_of(&smooth, &[0.09, -0.03, 0.03, -0.09]);
    let seam = 33..67; // overlap zone (tiles at 0 and 36, width 64)
    let mut boundary = (0.0f64, 0usize);
    let mut interior = (0.0f64, 0usize);
    for r in 1..99 {
        for c in 1..99 {
            let v = |rr: usize, cc: usize| out.at(rr, cc) as f64;
            let d2 = (v(r, c - 1) - 2.0 * v(r, c) + v(r, c + 1)).powi(2)
                + (v(r - 1, c) - 2.0 * v(r, c) + v(r + 1, c)).powi(2);
            let bucket = if seam.contains(&r) || seam.contains(&c) {
                &mut boundary
            } else {
                &mut interior
            };
            bucket.0 += d2;
            bucket.1 += 1;
        }
    }
    let ratio = (boundary.0 / boundary.1 as f64).sqrt() / (interior.0 / interior.1 as f64).sqrt();
    if ratio >= 1.5 {
        return Err(format!("cross-boundary / interior second-difference RMS {ratio:.3} >= 1.5"));
    }

    // insertion order cannot matter, bit for bit
    let plan = raster::make_tile_plan(&smooth, 64, 16).unwrap();
    let tiles: Vec<_> = plan
        .placements
        .iter()
        .map(|&(r0, c0)| (raster::extract_tile(&smooth, (r0, c0), 64).unwrap(), r0, c0))
        .collect();
    let orders: [Vec<usize>; 3] = [vec![0, 1, 2, 3], vec![3, 1, 0, 2], vec![2, 3, 0, 1]];
    let mut results = Vec::new();
    for order in &orders {
        let mut acc = BlendAccumulator::new(&smooth);
        for &i in order {
            let (tile, r0, c0) = &tiles[i];
            acc.accumulate_patch(tile, *r0, *c0).unwrap();
        }
        results.push(acc.finalize().values);
    }
    if results[0] != results[1] || results[0] != results[2] {
        return Err("mosaic depends on patch insertion order".into());
    }
    Ok(format!(
        "linear max err {max_err:.1e}; constant exact; seam ratio {ratio:.3}; order-independent"
    ))
}

// -------------------------------- 7: per-class improvement benchmark ---

fn criterion_7() -> Result<(Vec<WeightStore>, String), String> {
    let t0 = Instant::now();
    let handles: Vec<_> = SceneClass::ALL
        .into_iter()
        .map(|class| {
            std::thread::spawn(move || -> Result<(SceneClass, WeightStore, f64, f64), String> {
                let out = train::train(
                    class,
                    &bench_spec(PromptKind::LowRes),
                    &bench_train_cfg(25),
                    None,
                )
                .map_err(|e| format!("{class:?}: {e:?}"))?;
                let net = net_from(&out.store);
                let mut base_sq = 0.0;
                let mut pred_sq = 0.0;
                let n = 50u64;
                for i in 0..n {
                    let mut r = rng::seeded(777, 9_000_000 + i);
                    let sample = terrain::generate_scene(&mut r, class, &TerrainParams::default());
                    let rgb = terrain::render_pseudo_rgb(&mut r, &sample);
                    let prompt = terrain::degrade_to_prompt(&mut r, &sample, 8, 2.0, 3.0);
                    let up = raster::bilinear_resample(&prompt, 64, 64).unwrap();
                    base_sq += rmse_masked(&up.values, &sample.dsm.values, None).powi(2);
                    let pred = predict(&net, &rgb, &prompt, 64);
                    pred_sq += rmse_masked(&pred.values, &sample.dsm.values, None).powi(2);
                }
                let base = (base_sq / n as f64).sqrt();
                let pred = (pred_sq / n as f64).sqrt();
                Ok((class, out.store, base, pred))
            })
        })
        .collect();

    let mut stores: Vec<Option<WeightStore>> = vec![None; 3];
    let mut details = Vec::new();
    for h in handles {
        let (class, store, base, pred) = h.join().map_err(|_| "training thread panicked")??;
        let gain = 1.0 - pred / base;
        details.push(format!("{} {:.1}%", class.name(), gain * 100.0));
        if gain < 0.20 {
            return Err(format!(
                "{}: RMSE {pred:.3} vs baseline {base:.3} m, improvement {:.1}% < 20%",
                class.name(),
                gain * 100.0
            ));
        }
        stores[class.index()] = Some(store);
    }
    let stores: Vec<WeightStore> = stores.into_iter().map(|s| s.expect("all classes trained")).collect();
    let elapsed = t0.elapsed().as_secs_f64();
    if elapsed > 1800.0 {
        return Err(format!("runtime {elapsed:.0}s exceeds 30 min budget"));
    }
    details.sort();
    Ok((stores, format!("RMSE improvement over upsampled prompt: {}", details.join(", "))))
}

// ------------------------------------------------ 8: stream-network IoU ---

fn stream_mask(dem: &RasterGrid, threshold_frac: f64) -> StreamMask {
    let filled = hydro::fill_depressions(dem).unwrap();
    let dirs = hydro::d8_flow_direction(&filled);
    let acc = hydro::flow_accumulation(&dirs).unwrap();
    let threshold = ((dem.rows * dem.cols) as f64 * threshold_frac).ceil() as usize;
    hydro::extract_streams(&acc, threshold.max(1))
}

fn buffered_iou(pred: &RasterGrid, truth: &RasterGrid, frac: f64, radius_cells: f64) -> f64 {
    let pb = hydro::buffer_mask(&stream_mask(pred, frac), radius_cells * pred.cell_size, pred.cell_size);
    let tb = hydro::buffer_mask(&stream_mask(truth, frac), radius_cells * truth.cell_size, truth.cell_size);
    hydro::segmentation_metrics(&pb, &tb).unwrap().iou
}

fn criterion_8(vegetated: &WeightStore) -> Result<String, String> {
    let net = net_from(vegetated);
    let big = TerrainParams {
        size: 96,
        ..TerrainParams::default()
    };
    let mut wins = 0usize;
    for i in 0..20u64 {
        let mut r = rng::seeded(1234, 8_000_000 + i);
        let sample = terrain::generate_scene(&mut r, SceneClass::Vegetated, &big);
        let rgb = terrain::render_pseudo_rgb(&mut r, &sample);
        let prompt = terrain::degrade_to_prompt(&mut r, &sample, 8, 2.0, 3.0);
        let up = raster::bilinear_resample(&prompt, 96, 96).unwrap();
        let plan = raster::make_tile_plan(&sample.dsm, 64, 16).unwrap();
        let mut acc = BlendAccumulator::new(&sample.dsm);
        for &(r0, c0) in &plan.placements {
            // tile offsets are multiples of the prompt factor, so the
            // low-res window aligns exactly with the tile
            let p_tile = raster::extract_tile(&prompt, (r0 / 8, c0 / 8), 8).unwrap();
            let mut rgb_tile = vec![0.0f32; 3 * 64 * 64];
            for ch in 0..3 {
                for rr in 0..64 {
                    for cc in 0..64 {
                        rgb_tile[ch * 4096 + rr * 64 + cc] =
                            rgb[ch * 96 * 96 + (r0 + rr) * 96 + (c0 + cc)];
                    }
                }
            }
            let pred = predict(&net, &rgb_tile, &p_tile, 64);
            acc.accumulate_patch(&pred, r0, c0).unwrap();
        }
        let mosaic = acc.finalize();
        let iou_pred = buffered_iou(&mosaic, &sample.dsm, 0.005, 2.0);
        let iou_base = buffered_iou(&up, &sample.dsm, 0.005, 2.0);
        if iou_pred > iou_base {
            wins += 1;
        }
    }
    if wins < 16 {
        return Err(format!("predicted DEM stream IoU wins only {wins}/20 (< 16)"));
    }
    Ok(format!("predicted DEM stream IoU beats upsampled prompt in {wins}/20 mosaics"))
}

// ------------------------------ 9: void filling + region restriction ---

fn criterion_9(urban_lowres: &WeightStore) -> Result<String, String> {
    // region restriction is poison-proof: values outside the hole cannot
    // move an in-hole metric at all
    let mut r = rng::seeded(9, 9);
    let truth = RasterGrid::constant(16, 16, 0.0)
        .like((0..256).map(|_| (rng::normal(&mut r) * 10.0) as f32).collect());
    let cand = truth.like(
        truth
            .values
            .iter()
            .map(|&v| v + (rng::normal(&mut r) * 0.5) as f32)
            .collect(),
    );
    let hole: Vec<bool> = (0..256)
        .map(|k| (4..12).contains(&(k / 16)) && (4..12).contains(&(k % 16)))
        .collect();
    let mae0 = eval::mae(&truth, &cand, Some(&hole)).unwrap();
    let rmse0 = eval::rmse(&truth, &cand, Some(&hole)).unwrap();
    let poison = |g: &RasterGrid, delta: f32| {
        g.like(
            g.values
                .iter()
                .zip(&hole)
                .map(|(&v, &h)| if h { v } else { v + delta })
                .collect(),
        )
    };
    let mae1 = eval::mae(&poison(&truth, -555.0), &poison(&cand, 9999.0), Some(&hole)).unwrap();
    let rmse1 = eval::rmse(&poison(&truth, -555.0), &poison(&cand, 9999.0), Some(&hole)).unwrap();
    if mae0 != mae1 || rmse0 != rmse1 {
        return Err("outside-hole poisoning changed in-hole metrics".into());
    }

    // fine-tune the urban model on void-filled prompts, then require the
    // in-hole prediction to beat the bilinear patch that fills the prompt
    let out = train::train(
        SceneClass::Urban,
        &bench_spec(PromptKind::VoidFilled),
        &bench_train_cfg(5),
        Some(urban_lowres),
    )
    .map_err(|e| format!("fine-tune: {e:?}"))?;
    let net = net_from(&out.store);
    let mut pred_sq = 0.0;
    let mut base_sq = 0.0;
    let n = 50u64;
    for i in 0..n {
        let mut r = rng::seeded(555, 9_500_000 + i);
        let sample = terrain::generate_scene(&mut r, SceneClass::Urban, &TerrainParams::default());
        let rgb = terrain::render_pseudo_rgb(&mut r, &sample);
        let lr = terrain::degrade_to_prompt(&mut r, &sample, 8, 2.0, 3.0);
        let (carved, hole) = terrain::carve_void(&sample.dsm, &lr, 0.5);
        let pred = predict(&net, &rgb, &carved, 64);
        pred_sq += rmse_masked(&pred.values, &sample.dsm.values, Some(&hole)).powi(2);
        base_sq += rmse_masked(&carved.values, &sample.dsm.values, Some(&hole)).powi(2);
    }
    let pred = (pred_sq / n as f64).sqrt();
    let base = (base_sq / n as f64).sqrt();
    if pred >= base {
        return Err(format!(
            "in-hole RMSE {pred:.3} m does not beat patched prompt {base:.3} m"
        ));
    }
    Ok(format!(
        "poison-proof region metrics; in-hole RMSE {pred:.2} vs patched prompt {base:.2} m ({:.0}% better)",
        (1.0 - pred / base) * 100.0
    ))
}

// -------------------------------------------------- 10: scene classifier ---

fn criterion_10() -> Result<String, String> {
    let cfg = ClassifierTrainConfig {
        lr: 1e-3,
        epochs: 10,
        seed: 42,
        train_samples: 300,
        classifier: p2d_core::model::ClassifierConfig {
            patch: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let (store, _) = train::train_classifier(&cfg).map_err(|e| format!("{e:?}"))?;
    let confusion = train::classifier_confusion(&store, &cfg, 300, 777).map_err(|e| format!("{e:?}"))?;
    let f1 = train::macro_f1(&confusion);
    if f1 < 0.9 {
        return Err(format!("macro F1 {f1:.4} < 0.9 after 10 epochs"));
    }
    Ok(format!("macro F1 {f1:.4} on 300 held-out patches after 10 epochs"))
}

// ----------------------------------------------------- 11: determinism ---

fn p2d(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_p2d"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "p2d {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tiny_pipeline_config(dir: &Path, terrain_size: usize) -> PathBuf {
    use p2d_cli::config::*;
    let cfg = PipelineConfig {
        seed: 11,
        deterministic: true,
        tile_size: 16,
        overlap: 8,
        registry: "registry.json".into(),
        terrain: TerrainCfg {
            size: terrain_size,
            ..TerrainCfg::default()
        },
        model: ModelCfg {
            input_size: 16,
            vit_patch: 4,
            embed_dim: 8,
            depth: 4,
            heads: 2,
            decoder_channels: [4, 4, 4, 4],
            ..ModelCfg::default()
        },
        train: TrainCfg {
            epochs: 2,
            train_samples: 4,
            val_samples: 0,
            factor: 4,
            lr: 1e-3,
            ..TrainCfg::default()
        },
        ..PipelineConfig::default()
    };
    let path = dir.join(format!("config_{terrain_size}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// One full train -> synth -> infer -> mosaic -> eval run; returns the bytes
/// of the weight file, the mosaicked DEM, and the eval report.
fn deterministic_run(dir: &Path) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
    let s = |p: &Path| p.display().to_string();
    let cfg16 = tiny_pipeline_config(dir, 16);
    let cfg24 = tiny_pipeline_config(dir, 24);

    let weights = dir.join("lowres_bare.p2dw");
    p2d(&[
        "--config", &s(&cfg16), "--deterministic", "train", "--task", "lowres",
        "--class", "bare", "--out", &s(&weights),
    ])?;

    let scenes = dir.join("scenes");
    p2d(&["--config", &s(&cfg24), "--deterministic", "synth", "--out", &s(&scenes), "--count", "1"])?;
    let scene = scenes.join("bare_002");
    let dsm = p2d_cli::io::read_raster(&scene.join("dsm.r32g")).map_err(|e| e.to_string())?;
    let prompt = raster::average_downsample(&dsm, 4).unwrap();
    let prompt_path = dir.join("prompt.r32g");
    p2d_cli::io::write_raster(&prompt, &prompt_path).map_err(|e| e.to_string())?;
    let baseline = raster::bilinear_resample(&prompt, 24, 24).unwrap();
    let baseline_path = dir.join("baseline.r32g");
    p2d_cli::io::write_raster(&baseline, &baseline_path).map_err(|e| e.to_string())?;

    let rgb = format!(
        "{},{},{}",
        s(&scene.join("red.r32g")),
        s(&scene.join("green.r32g")),
        s(&scene.join("blue.r32g"))
    );
    let patches = dir.join("patches");
    p2d(&[
        "--config", &s(&cfg16), "--deterministic", "infer", "--rgb", &rgb,
        "--prompt", &s(&prompt_path), "--task", "lowres", "--force-class", "bare",
        "--out", &s(&patches),
    ])?;
    let dem = dir.join("dem.r32g");
    p2d(&["mosaic", "--patches", &s(&patches), "--out", &s(&dem)])?;
    let report = dir.join("report.json");
    p2d(&[
        "eval", "--truth", &s(&scene.join("dsm.r32g")), "--candidate", &s(&dem),
        "--baseline", &s(&baseline_path), "--out", &s(&report),
    ])?;

    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok((read(&weights)?, read(&dem)?, read(&report)?))
}

fn criterion_11() -> Result<String, String> {
    let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = deterministic_run(dir_a.path())?;
    let b = deterministic_run(dir_b.path())?;
    if a.0 != b.0 {
        return Err("weight files differ between identical deterministic runs".into());
    }
    if a.1 != b.1 {
        return Err("mosaicked DEMs differ between identical deterministic runs".into());
    }
    if a.2 != b.2 {
        return Err("eval reports differ between identical deterministic runs".into());
    }
    Ok("weights, DEM, and eval report bit-identical across two seeded runs".into())
}
