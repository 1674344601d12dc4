//! Analytic examples where the usual estimators miss the identified set.

use std::fmt::Write as _;

use proxybounds_core::dgp::{example1_spec, example2_spec, example3_spec};
use proxybounds_core::{
    identify_baseline, identify_free_cov, latent_to_observable_moments, lubotsky_wittenberg,
    reduced_form, LatentSpec, MomentSummary, ProxyIndex,
};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalleryEntry {
    pub name: &'static str,
    pub parameters: String,
    pub spec: LatentSpec,
    pub moments: MomentSummary,
    pub b1: f64,
    pub b_star: Option<f64>,
    pub lb: f64,
    pub ub: f64,
    pub lb_free_cov: f64,
    pub claim: &'static str,
    pub holds: bool,
}

fn entry(
    name: &'static str,
    parameters: String,
    spec: LatentSpec,
    claim: &'static str,
) -> proxybounds_core::Result<GalleryEntry> {
    let m = latent_to_observable_moments(&spec);
    let b = identify_baseline(&m)?;
    Ok(GalleryEntry {
        name,
        parameters,
        spec,
        moments: m,
        b1: reduced_form(&m, ProxyIndex::First)?,
        b_star: lubotsky_wittenberg(&m).ok().map(|lw| lw.b_star),
        lb: b.lower,
        ub: b.upper,
        lb_free_cov: identify_free_cov(&m)?.lower,
        claim,
        holds: false,
    })
}

pub fn build() -> proxybounds_core::Result<Vec<GalleryEntry>> {
    let mut e1 = entry(
        "Example 1",
        "beta 1, c1 1, a1 0".into(),
        example1_spec(1.0, 1.0, 0.0)?,
        "beta >= LB > b1",
    )?;
    e1.holds = e1.spec.beta >= e1.lb && e1.lb > e1.b1;

    let mut e2 = entry(
        "Example 2",
        "var_u1 0.5, cov_x_u1 -0.6".into(),
        example2_spec(0.5, -0.6)?,
        "b1 > UB",
    )?;
    e2.holds = e2.b1 > e2.ub;

    let mut e3 = entry(
        "Example 3",
        "var_u2 2, cov_u1_u2 0".into(),
        example3_spec(2.0, 0.0)?,
        "beta >= LB_C > b*",
    )?;
    e3.holds = e3
        .b_star
        .is_some_and(|b| e3.spec.beta >= e3.lb_free_cov && e3.lb_free_cov > b);
    Ok(vec![e1, e2, e3])
}

pub fn render(entries: &[GalleryEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let b_star = e.b_star.map_or("n/a".to_string(), |b| format!("{b:.4}"));
        let _ = writeln!(out, "{} ({})", e.name, e.parameters);
        let _ = writeln!(
            out,
            "  beta {:.4}  b1 {:.4}  b* {b_star}  LB {:.4}  UB {:.4}  LB_C {:.4}",
            e.spec.beta, e.b1, e.lb, e.ub, e.lb_free_cov
        );
        let _ = writeln!(
            out,
            "  {}: {}",
            e.claim,
            if e.holds { "holds" } else { "FAILS" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gallery_values() {
        let g = build().unwrap();
        assert!(g.iter().all(|e| e.holds));
        assert!((g[0].b1 - 0.5).abs() < 1e-12 && (g[0].lb - 0.8).abs() < 1e-12 && g[0].ub == 1.0);
        assert!((g[1].b1 - 4.0 / 3.0).abs() < 1e-12 && (g[1].ub - 1.0).abs() < 1e-12);
        assert!((g[2].b_star.unwrap() - 0.6).abs() < 1e-12);
        assert!((g[2].lb_free_cov - 2.0 / 3.0).abs() < 1e-12);
        let text = render(&g);
        assert!(
            text.contains("b1 0.5000") && text.contains("LB 0.8000") && text.contains("UB 1.0000")
        );
        assert!(text.contains("b1 1.3333"));
        assert!(text.contains("b* 0.6000") && text.contains("LB_C 0.6667"));
    }
}
