//! Interactive browser demo.
//!
//! Three operations back the static page in `www/`: a Lasso race between the
//! accelerated and plain splitting arms, an explorer for the per-iteration
//! feasibility bound of the accelerated scheme on a certified instance, and a
//! small robust tensor-completion run comparing the three multi-block arms.
//! Every function returns a JSON string so the page needs no framework, just
//! a canvas and a few sliders.

use aspadmm::admm::{bound_constants, run_aspadmm, SolverConfig};
use aspadmm::apps::lasso::{gen_lasso_certified_with_lambda, gen_lasso_noisy, lasso_run, LassoRunConfig};
use aspadmm::apps::rtc::{gen_rtc_instance, rtc_pmm_run, RtcArm, RtcPmmConfig};
use wasm_bindgen::prelude::wasm_bindgen;

/// Lasso race: error curves (`max(|r|, |s|)`) of both arms.
#[wasm_bindgen]
pub fn lasso_race(m: usize, n: usize, seed: u64, beta: f64, tau: f64) -> String {
    let run = || -> Result<serde_json::Value, String> {
        if !(0.0 < tau && tau < 1.0) {
            return Err("tau must lie in (0, 1)".into());
        }
        let inst = gen_lasso_noisy(m.clamp(4, 256), n.clamp(8, 1024), n.clamp(8, 1024) / 16, seed);
        let mut acc_cfg = LassoRunConfig::aspadmm();
        acc_cfg.beta = beta.max(1e-6);
        acc_cfg.tau = tau;
        acc_cfg.max_iter = 5_000;
        let mut plain_cfg = LassoRunConfig::spadmm();
        plain_cfg.beta = beta.max(1e-6);
        plain_cfg.max_iter = 5_000;
        let acc = lasso_run(&inst, &acc_cfg).map_err(|e| e.to_string())?;
        let plain = lasso_run(&inst, &plain_cfg).map_err(|e| e.to_string())?;
        let curve = |t: &[aspadmm::apps::lasso::LassoTraceRow]| -> Vec<(usize, f64)> {
            t.iter().map(|r| (r.k, r.error)).collect()
        };
        Ok(serde_json::json!({
            "aspadmm": { "iterations": acc.iterations, "curve": curve(&acc.trace) },
            "spadmm": { "iterations": plain.iterations, "curve": curve(&plain.trace) },
        }))
    };
    finish(run())
}

/// Feasibility of the accelerated run against its certified per-iteration
/// bound `2 C3 / (1 + K (1 - tau))`.
#[wasm_bindgen]
pub fn bound_explorer(tau: f64, lambda: f64, iterations: usize, seed: u64) -> String {
    let run = || -> Result<serde_json::Value, String> {
        if !(0.0 < tau && tau < 1.0) {
            return Err("tau must lie in (0, 1)".into());
        }
        let inst = gen_lasso_certified_with_lambda(20, 50, 5, 0.1, seed).map_err(|e| e.to_string())?;
        let problem = inst.to_two_block();
        let mut cfg = SolverConfig::aspadmm(lambda.max(1e-6), tau);
        cfg.max_iter = iterations.clamp(10, 2_000);
        cfg.tol_kkt = 0.0;
        cfg.reference = inst.reference();
        let state = run_aspadmm(&problem, &cfg, None).map_err(|e| e.to_string())?;
        let constants = bound_constants(&problem, &cfg, None).map_err(|e| e.to_string())?;
        let rows = state.trace.rows();
        Ok(serde_json::json!({
            "c3": constants.c3,
            "feasibility": rows.iter().map(|r| (r.k, r.feasibility)).collect::<Vec<_>>(),
            "bound": rows.iter().filter_map(|r| r.bound_feas.map(|b| (r.k, b))).collect::<Vec<_>>(),
        }))
    };
    finish(run())
}

/// Small robust tensor completion: first-subproblem error curves of the
/// three arms plus the recovery error of the full outer loop.
#[wasm_bindgen]
pub fn rtc_race(seed: u64, sr: f64, alpha: f64) -> String {
    let run = || -> Result<serde_json::Value, String> {
        let inst = gen_rtc_instance(8, 8, 3, 2, sr.clamp(0.1, 1.0), alpha.clamp(0.0, 0.9), seed)
            .map_err(|e| e.to_string())?;
        let mut arms = serde_json::Map::new();
        for (arm, name) in [
            (RtcArm::SgsAspadmm, "sgs-aspadmm"),
            (RtcArm::SgsSpadmm, "sgs-spadmm"),
            (RtcArm::Admm3d, "admm-3d"),
        ] {
            let mut cfg = RtcPmmConfig::default();
            cfg.arm = arm;
            cfg.outer_max = 4;
            let out = rtc_pmm_run(&inst, &cfg).map_err(|e| e.to_string())?;
            let first: Vec<(usize, f64)> =
                out.inner_traces[0].iter().map(|r| (r.k, r.error)).collect();
            arms.insert(
                name.into(),
                serde_json::json!({
                    "first_subproblem_curve": first,
                    "inner_iterations": out.inner_iterations,
                    "recovery_rel_error": out.rel_error,
                }),
            );
        }
        Ok(serde_json::Value::Object(arms))
    };
    finish(run())
}

fn finish(r: Result<serde_json::Value, String>) -> String {
    match r {
        Ok(v) => serde_json::json!({ "ok": v }).to_string(),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_endpoints_return_well_formed_json() {
        let v: serde_json::Value = serde_json::from_str(&lasso_race(16, 64, 3, 1.0, 0.95)).unwrap();
        assert!(v["ok"]["aspadmm"]["iterations"].is_u64());
        let v: serde_json::Value = serde_json::from_str(&bound_explorer(0.9, 1.0, 50, 3)).unwrap();
        assert!(v["ok"]["c3"].is_f64());
        assert!(v["ok"]["bound"].as_array().unwrap().len() > 10);
        let v: serde_json::Value = serde_json::from_str(&rtc_race(2, 0.8, 0.2)).unwrap();
        assert!(v["ok"]["sgs-aspadmm"]["recovery_rel_error"].is_f64());
    }

    #[test]
    fn demo_endpoints_report_bad_parameters() {
        let v: serde_json::Value = serde_json::from_str(&lasso_race(16, 64, 3, 1.0, 1.5)).unwrap();
        assert!(v["error"].is_string());
    }
}
