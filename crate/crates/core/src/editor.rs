//! Attribute editing by translation along unit hyperplane normals, either
//! directly in the original space or in the proxy space followed by the
//! inverse map.

use crate::classifiers::SvmHyperplane;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::space::{LatentSpace, Space};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditMode {
    /// Move every code by `α` distance units.
    Step(f64),
    /// Move every code to signed distance `τ`.
    ToDistance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditRequest {
    pub attribute: usize,
    pub mode: EditMode,
    pub space: Space,
}

fn check(w: &Tensor2, h: &SvmHyperplane) -> Result<()> {
    if w.cols() != h.weight.len() {
        return Err(Error::Dimension(format!(
            "codes of width {} vs hyperplane of dimension {}",
            w.cols(),
            h.weight.len()
        )));
    }
    Ok(())
}

fn translate(w: &Tensor2, normal: &[f64], steps: &[f64]) -> Tensor2 {
    let mut out = w.clone();
    for (r, &a) in steps.iter().enumerate() {
        out.row_mut(r).iter_mut().zip(normal).for_each(|(x, n)| *x += a * n);
    }
    out
}

fn edit_rows(space: LatentSpace<'_>, w: &Tensor2, h: &SvmHyperplane, steps: &[f64]) -> Result<Tensor2> {
    check(w, h)?;
    let normal = h.unit_normal()?;
    match space {
        LatentSpace::Original => Ok(translate(w, &normal, steps)),
        LatentSpace::Proxy(model) => {
            let (proxy, _) = model.forward(w)?;
            model.inverse(&translate(&proxy, &normal, steps))
        }
    }
}

/// `w + α · unit(normal)`.
pub fn edit_original(w: &Tensor2, h: &SvmHyperplane, alpha: f64) -> Result<Tensor2> {
    edit_rows(LatentSpace::Original, w, h, &vec![alpha; w.rows()])
}

/// `T⁻¹(T(w) + α · unit(normal))` with `h` fitted on proxy codes.
pub fn edit_proxy(model: &FlowModel, w: &Tensor2, h: &SvmHyperplane, alpha: f64) -> Result<Tensor2> {
    edit_rows(LatentSpace::Proxy(model), w, h, &vec![alpha; w.rows()])
}

/// Steps each code so its signed distance (measured in the editing space)
/// becomes `tau`.
pub fn edit_to_target(space: LatentSpace<'_>, w: &Tensor2, h: &SvmHyperplane, tau: f64) -> Result<Tensor2> {
    check(w, h)?;
    let measured = space.embed(w, Default::default())?;
    let steps: Vec<f64> = (0..w.rows()).map(|r| tau - h.signed_distance(measured.row(r))).collect();
    edit_rows(space, w, h, &steps)
}

/// Applies a request given the hyperplanes of both spaces (indexed by
/// attribute).
pub fn apply(
    request: &EditRequest,
    model: &FlowModel,
    original: &[SvmHyperplane],
    proxy: &[SvmHyperplane],
    w: &Tensor2,
) -> Result<Tensor2> {
    let (space, planes) = match request.space {
        Space::Original => (LatentSpace::Original, original),
        Space::Proxy => (LatentSpace::Proxy(model), proxy),
    };
    let h = planes.get(request.attribute).ok_or_else(|| {
        Error::Config(format!(
            "attribute {} has no {} hyperplane",
            request.attribute,
            request.space.as_str()
        ))
    })?;
    match request.mode {
        EditMode::Step(alpha) if alpha.is_finite() => edit_rows(space, w, h, &vec![alpha; w.rows()]),
        EditMode::ToDistance(tau) if tau.is_finite() => edit_to_target(space, w, h, tau),
        _ => Err(Error::Config("edit magnitude must be finite".into())),
    }
}
