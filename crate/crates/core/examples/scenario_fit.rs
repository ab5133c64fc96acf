//! Quick simulation study with the INLA engine.
//!
//! `cargo run --release --example scenario_fit -- <scenario> <replicates>`;
//! set `LAPLACE=1` for the mean shift, `ASSOC_PRIOR=mean,prec` or
//! `PC_RE_W=w` to change priors.

use std::time::Instant;
use tpjm_core::fit::fit_inla;
use tpjm_core::inla::ExploreOptions;
use tpjm_core::model::{build_spec, ModelConfig, PriorConfig};
use tpjm_core::report::true_value;
use tpjm_core::simgen::{generate_replicate, ScenarioConfig};

fn main() {
    let k: u8 = std::env::args().nth(1).map_or(1, |s| s.parse().unwrap());
    let reps: u64 = std::env::args().nth(2).map_or(1, |s| s.parse().unwrap());
    let cfg = ScenarioConfig::scenario(k, 2024).unwrap();
    let spec = build_spec(&ModelConfig::scenario(cfg.re_structure), &["trt"]).unwrap();
    let mut priors = PriorConfig::default_for(spec.re_dim());
    if let Ok(w) = std::env::var("PC_RE_W") {
        for p in &mut priors.pc_re {
            p.w = w.parse().unwrap();
        }
    }
    if let Ok(a) = std::env::var("ASSOC_PRIOR") {
        let (m, p) = a.split_once(',').unwrap();
        priors.assoc_mean = m.parse().unwrap();
        priors.assoc_prec = p.parse().unwrap();
    }
    let mut opts = ExploreOptions::default();
    opts.laplace_shift = std::env::var("LAPLACE").is_ok();
    let mut acc: Vec<(String, f64, f64, f64, usize)> = Vec::new();
    let t = Instant::now();
    let mut fails = 0;
    for rep in 0..reps {
        let data = generate_replicate(&cfg, rep).unwrap();
        let fit = match fit_inla(&data, &spec, &priors, &opts, false) {
            Ok(f) => f,
            Err(e) => {
                println!("rep {rep}: {e}");
                fails += 1;
                continue;
            }
        };
        if acc.is_empty() {
            acc = fit
                .estimates
                .iter()
                .map(|e| (e.label.clone(), 0.0, 0.0, 0.0, 0))
                .collect();
        }
        for (a, e) in acc.iter_mut().zip(&fit.estimates) {
            let tv = true_value(&cfg.truth, cfg.re_structure, &e.label).expect(&e.label);
            a.1 += e.estimate;
            a.2 += e.estimate * e.estimate;
            a.3 += e.sd;
            if e.lower <= tv && tv <= e.upper {
                a.4 += 1;
            }
        }
    }
    let n = (reps - fails) as f64;
    println!("{:.1}s total, {fails} failures", t.elapsed().as_secs_f64());
    for a in &acc {
        let tv = true_value(&cfg.truth, cfg.re_structure, &a.0).unwrap();
        let m = a.1 / n;
        let sd = ((a.2 - n * m * m) / (n - 1.0)).max(0.0).sqrt();
        println!(
            "{:14} true {:6.2} mean {:7.3} bias {:+.3} sd {:.3} postsd {:.3} cp {:.2}",
            a.0,
            tv,
            m,
            m - tv,
            sd,
            a.3 / n,
            a.4 as f64 / n
        );
    }
}
