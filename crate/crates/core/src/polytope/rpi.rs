use crate::numerics::{is_schur, Mat, Tolerances, Vector};

use super::{image_support, Polytope, PolytopeError, Result, Support};

/// Largest number of matrix powers tried while looking for contraction.
const MAX_POWERS: usize = 200;
/// Template enrichment rounds allowed before verification gives up.
const ENRICHMENT_ROUNDS: usize = 5;

/// Outer approximation of the minimal robust positively invariant set,
/// together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RpiSet {
    pub set: Polytope,
    /// number of Minkowski terms `Σ_{i<s} A_Kⁱ W`
    pub steps: usize,
    /// contraction factor reached: `A_Kˢ W ⊆ α W` along every template direction
    pub alpha: f64,
    /// inflation applied when template enrichment alone did not certify
    /// invariance (1 when it did)
    pub scale: f64,
    pub enrichment_rounds: usize,
}

/// Builds a polytope `Φ` with `A_K Φ ⊕ W ⊆ Φ`.
///
/// For the smallest `s` with `h_W((A_Kˢ)ᵀd) ≤ α h_W(d)` (α ≤ `alpha_max`) on
/// every template direction `d`, the offsets are
/// `(1 − α)⁻¹ Σ_{i<s} h_W((A_Kⁱ)ᵀd)`. The result is certified facet by facet
/// before it is returned; when a facet fails, the directions `A_Kᵀd` of the
/// failing facets join the template and the offsets are recomputed. If the
/// template still fails after the enrichment rounds, the last polytope is
/// inflated by the smallest factor that certifies it, provided it is
/// strictly contracted by `A_K` along every facet.
pub fn construct_rpi(
    a_k: &Mat,
    w: &Polytope,
    template: &[Vector],
    alpha_max: f64,
) -> Result<RpiSet> {
    let n = w.dim();
    if a_k.shape() != (n, n) {
        return Err(PolytopeError::Dimension(format!(
            "A_K is {:?} but W has dimension {}",
            a_k.shape(),
            n
        )));
    }
    if !(0.0..1.0).contains(&alpha_max) {
        return Err(PolytopeError::Dimension(format!(
            "alpha_max must lie in [0, 1), got {alpha_max}"
        )));
    }
    if !is_schur(a_k) {
        return Err(PolytopeError::NotSchur);
    }
    if !w.contains(&Vector::zeros(n)) {
        return Err(PolytopeError::OriginNotContained);
    }

    let mut dirs: Vec<Vector> = Vec::new();
    for d in template {
        push_direction(&mut dirs, d)?;
    }
    // W's own facets keep the contraction test meaningful when W is not a box
    for i in 0..w.n_facets() {
        push_direction(&mut dirs, &w.normals().row(i).transpose())?;
    }
    if dirs.is_empty() {
        return Err(PolytopeError::Dimension("empty direction template".into()));
    }

    let tiny = 1e-14;
    let mut powers = vec![Mat::identity(n, n)];
    let mut found = None;
    for s in 1..=MAX_POWERS {
        let next = a_k * powers.last().expect("identity seeded");
        let mut alpha: f64 = 0.0;
        for d in &dirs {
            let num = w.support(&(next.transpose() * d))?;
            let den = w.support(d)?;
            let ratio = if num <= tiny {
                0.0
            } else if den <= tiny {
                f64::INFINITY
            } else {
                num / den
            };
            alpha = alpha.max(ratio);
        }
        powers.push(next);
        if alpha <= alpha_max {
            found = Some((s, alpha));
            break;
        }
    }
    let (steps, alpha) = found.ok_or(PolytopeError::NotContractive(MAX_POWERS))?;
    powers.truncate(steps);

    let offset_of = |d: &Vector| -> Result<f64> {
        let mut total = 0.0;
        for p in &powers {
            total += w.support(&(p.transpose() * d))?;
        }
        Ok(total / (1.0 - alpha))
    };

    let tol = Tolerances::DEFAULT.redundancy;
    let mut last = None;
    for round in 0..=ENRICHMENT_ROUNDS {
        let offsets = dirs
            .iter()
            .map(offset_of)
            .collect::<Result<Vec<f64>>>()?;
        let normals = Mat::from_rows(&dirs.iter().map(|d| d.transpose()).collect::<Vec<_>>());
        let phi = Polytope::from_rows_unchecked(normals, Vector::from_vec(offsets))?;

        // per facet: h_Φ(A_Kᵀd) and h_W(d)
        let mut images = Vec::with_capacity(phi.n_facets());
        let mut failing = Vec::new();
        for i in 0..phi.n_facets() {
            let d = phi.normals().row(i).transpose();
            let image = phi.support(&(a_k.transpose() * &d))?;
            let hw = w.support(&d)?;
            if image + hw > phi.offsets()[i] + tol {
                failing.push(d);
            }
            images.push((image, hw));
        }
        if failing.is_empty() {
            log::debug!(
                "RPI set: s = {steps}, alpha = {alpha:.4}, {} facets, {round} enrichment rounds",
                phi.n_facets()
            );
            return Ok(RpiSet {
                set: phi,
                steps,
                alpha,
                scale: 1.0,
                enrichment_rounds: round,
            });
        }
        last = Some((phi, images, round));
        let before = dirs.len();
        for d in failing {
            push_direction(&mut dirs, &(a_k.transpose() * d))?;
        }
        if dirs.len() == before {
            break;
        }
    }

    // The template never closed under A_Kᵀ (rotating dynamics). If the last
    // polytope is strictly contracted along every facet, the smallest
    // σ ≥ 1 with σ (c_d − h_Φ(A_Kᵀd)) ≥ h_W(d) makes σΦ invariant,
    // because h_{σΦ} = σ h_Φ.
    let (phi, images, rounds) = last.expect("at least one round ran");
    let mut scale: f64 = 1.0;
    for (i, &(image, hw)) in images.iter().enumerate() {
        let margin = phi.offsets()[i] - image;
        if margin <= 0.0 {
            return Err(PolytopeError::VerificationFailed(ENRICHMENT_ROUNDS));
        }
        scale = scale.max(hw / margin);
    }
    let scaled = phi.scaled(scale * (1.0 + 1e-12));
    let excess = image_excess(&scaled, a_k, w)?;
    if excess > tol {
        return Err(PolytopeError::VerificationFailed(ENRICHMENT_ROUNDS));
    }
    log::debug!(
        "RPI set: s = {steps}, alpha = {alpha:.4}, {} facets, scaled by {scale:.6} after {rounds} enrichment rounds",
        scaled.n_facets()
    );
    Ok(RpiSet {
        set: scaled,
        steps,
        alpha,
        scale,
        enrichment_rounds: rounds,
    })
}

/// `max_d h_Φ(A_Kᵀd) + h_W(d) − c_d` over the facets of `phi`.
fn image_excess(phi: &Polytope, a_k: &Mat, w: &Polytope) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..phi.n_facets() {
        let d = phi.normals().row(i).transpose();
        let lhs = image_support(phi, a_k, Some(w as &dyn Support), &d)?;
        worst = worst.max(lhs - phi.offsets()[i]);
    }
    Ok(worst)
}

/// Adds a direction scaled to unit ∞-norm unless it is zero or already present.
fn push_direction(dirs: &mut Vec<Vector>, d: &Vector) -> Result<()> {
    let scale = d.amax();
    if scale <= 1e-12 {
        return Ok(());
    }
    let unit = d / scale;
    if !dirs.iter().any(|e| (e - &unit).amax() <= 1e-10) {
        dirs.push(unit);
    }
    Ok(())
}

/// `±eᵢ` for every axis.
pub fn axis_template(dim: usize) -> Vec<Vector> {
    let mut out = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = Vector::zeros(dim);
            e[i] = s;
            out.push(e);
        }
    }
    out
}
