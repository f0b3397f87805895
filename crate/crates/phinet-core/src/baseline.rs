//! Classical comparator: match a test volume against one template per class
//! by Pearson correlation after rigid grid alignment. Deliberately simple;
//! it exists to give the network something to beat.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::volume::{resample_onto, Volume};

pub struct TemplateSet {
    classes: Vec<String>,
    templates: Vec<Volume>,
}

impl TemplateSet {
    /// One template per class, all on a common grid.
    pub fn new(classes: Vec<String>, templates: Vec<Volume>) -> Result<Self, CoreError> {
        if classes.len() < 2 {
            return Err(CoreError::InvalidData(
                "template set needs at least 2 classes".into(),
            ));
        }
        if classes.len() != templates.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} classes but {} templates",
                classes.len(),
                templates.len()
            )));
        }
        for (i, a) in classes.iter().enumerate() {
            if classes[i + 1..].contains(a) {
                return Err(CoreError::InvalidData(format!(
                    "duplicate template class {a}"
                )));
            }
        }
        let first = &templates[0];
        for t in &templates[1..] {
            if t.extents() != first.extents() || t.spacing() != first.spacing() {
                return Err(CoreError::ShapeMismatch(
                    "templates do not share a common grid".into(),
                ));
            }
        }
        Ok(TemplateSet { classes, templates })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn templates(&self) -> &[Volume] {
        &self.templates
    }
}

/// Resamples the test volume onto the template's grid, aligning physical
/// centers. No elastic warping; volumes already on the grid pass through.
pub fn align_to_template_grid(volume: &Volume, template: &Volume) -> Result<Volume, CoreError> {
    if volume.extents() == template.extents() && volume.spacing() == template.spacing() {
        return Ok(volume.clone());
    }
    resample_onto(volume, template.extents(), template.spacing())
}

/// Plain Pearson correlation over the flattened voxel arrays.
pub fn pearson_cc(a: &Volume, b: &Volume) -> Result<f64, CoreError> {
    if a.extents() != b.extents() {
        return Err(CoreError::ShapeMismatch(format!(
            "correlation needs matching extents, got {:?} vs {:?}",
            a.extents(),
            b.extents()
        )));
    }
    let n = a.len() as f64;
    let mean = |v: &Volume| v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let ma = mean(a);
    let mb = mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let dx = x as f64 - ma;
        let dy = y as f64 - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(CoreError::InvalidData(
            "zero variance input, correlation undefined".into(),
        ));
    }
    Ok(cov / libm::sqrt(va * vb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineDecision {
    pub class: usize,
    pub correlations: Vec<f64>,
}

/// Correlates against every template and picks the best match; ties break
/// to the earliest class in the set's order.
pub fn classify_by_template(
    volume: &Volume,
    templates: &TemplateSet,
) -> Result<BaselineDecision, CoreError> {
    let mut correlations = Vec::with_capacity(templates.templates.len());
    for t in &templates.templates {
        let aligned = align_to_template_grid(volume, t)?;
        correlations.push(pearson_cc(&aligned, t)?);
    }
    let mut class = 0;
    for (i, &r) in correlations.iter().enumerate() {
        if r > correlations[class] {
            class = i;
        }
    }
    Ok(BaselineDecision {
        class,
        correlations,
    })
}
