//! Analytic parameter and FLOP accounting.
//!
//! Convention: a multiply-accumulate is 2 FLOPs, counting every kernel tap
//! including those that fall on zero padding. Bias additions are folded into
//! the multiply-accumulate count. Normalizations, activations, elementwise
//! products/sums, and pooling cost 1 FLOP per element they read, per pass.

use std::fmt::Write as _;

use crate::ops::conv::ConvGeometry;

pub const CONVENTION: &str = "2 FLOPs per multiply-accumulate (all kernel taps, bias folded in); \
1 FLOP per element for norms, activations, elementwise ops, and pooling";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposeConv,
    Linear,
    Norm,
    Activation,
    Elementwise,
    Pool,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::TransposeConv => "tconv",
            LayerKind::Linear => "linear",
            LayerKind::Norm => "norm",
            LayerKind::Activation => "act",
            LayerKind::Elementwise => "eltwise",
            LayerKind::Pool => "pool",
        }
    }

    /// Whether the layer is a (transpose) convolution.
    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::TransposeConv)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub flops: u64,
    pub output: Vec<usize>,
}

/// Per-layer ledger in forward execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    pub rows: Vec<LayerCost>,
}

impl Ledger {
    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, params: u64, flops: u64, output: &[usize]) {
        self.rows.push(LayerCost { name: name.into(), kind, params, flops, output: output.to_vec() });
    }

    pub fn conv(&mut self, name: &str, g: &ConvGeometry, params: u64) {
        let out = [g.batch, g.out_channels, g.out_h, g.out_w];
        self.push(name, LayerKind::Conv, params, 2 * g.macs(), &out);
    }

    /// `g` is the geometry of the forward convolution the transpose conv inverts.
    pub fn transpose_conv(&mut self, name: &str, g: &ConvGeometry, params: u64) {
        let out = [g.batch, g.in_channels, g.in_h, g.in_w];
        self.push(name, LayerKind::TransposeConv, params, 2 * g.macs(), &out);
    }

    /// Cost proportional to the element count of `shape`.
    pub fn per_element(&mut self, name: &str, kind: LayerKind, params: u64, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.push(name, kind, params, n as u64, shape);
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn conv_flops(&self) -> u64 {
        self.rows.iter().filter(|r| r.kind.is_conv()).map(|r| r.flops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,params,flops,output_shape\n");
        for r in &self.rows {
            let shape: Vec<String> = r.output.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "{},{},{},{},{}", r.name, r.kind.name(), r.params, r.flops, shape.join("x"));
        }
        let _ = writeln!(s, "total,,{},{},", self.total_params(), self.total_flops());
        s
    }

    pub fn to_table(&self) -> String {
        let shapes: Vec<String> =
            self.rows.iter().map(|r| r.output.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")).collect();
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let shape_w = shapes.iter().map(|s| s.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<7}  {:>12}  {:>16}  {:<shape_w$}",
            "layer", "kind", "params", "flops", "output"
        );
        for (r, shape) in self.rows.iter().zip(&shapes) {
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<7}  {:>12}  {:>16}  {:<shape_w$}",
                r.name,
                r.kind.name(),
                r.params,
                r.flops,
                shape
            );
        }
        let _ = writeln!(s, "{:<name_w$}  {:<7}  {:>12}  {:>16}", "total", "", self.total_params(), self.total_flops());
        let _ = writeln!(s, "convention: {CONVENTION}");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::{conv_geometry, strip_spec, StripAxis};
    use crate::ops::ConvSpec;

    #[test]
    fn pointwise_conv_hand_count() {
        let g = conv_geometry(&[1, 2, 4, 4], &[3, 2, 1, 1], &ConvSpec::new(1, 1)).unwrap();
        let mut l = Ledger::default();
        l.conv("pw", &g, 6);
        assert_eq!(l.total_flops(), 192);
    }

    #[test]
    fn strip_conv_count_is_2chwk() {
        let (c, h, w, k) = (8, 10, 12, 7);
        let spec = strip_spec(c, k, StripAxis::Horizontal).unwrap();
        let g = conv_geometry(&[1, c, h, w], &[c, 1, 1, k], &spec).unwrap();
        let mut l = Ledger::default();
        l.conv("strip", &g, (c * k) as u64);
        assert_eq!(l.total_flops(), (2 * c * h * w * k) as u64);
        assert_eq!(l.total_params(), 56);
    }

    #[test]
    fn csv_has_header_and_total() {
        let mut l = Ledger::default();
        l.per_element("act", LayerKind::Activation, 0, &[1, 2, 3, 3]);
        let csv = l.to_csv();
        assert!(csv.starts_with("layer,kind,params,flops,output_shape\n"));
        assert!(csv.contains("act,act,0,18,1x2x3x3"));
        assert!(csv.trim_end().ends_with("total,,0,18,"));
    }
}
