//! Layer-by-layer parameter audit, with a comparison against the published
//! ResNet layer table (128×128 input, full width).

use std::fmt::{self, Write as _};

use super::{BasicBlock, LayerNode, ModelGraph, ModelKind};
use crate::nn::{BatchNorm2d, Conv2d, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Conv,
    BatchNorm,
    Projection,
    ProjectionBn,
    Pool,
    Flatten,
    Linear,
}

/// Reference ResNet table: kind, output `(H, W, C)`, printed parameter count.
pub const TABLE1_ROWS: &[(RowKind, [usize; 3], u64)] = {
    use RowKind::{BatchNorm as B, Conv as C, Linear as L, Pool as P};
    &[
        (C, [128, 128, 64], 2368),
        (B, [128, 128, 64], 64),
        (C, [128, 128, 64], 36864),
        (B, [128, 128, 64], 64),
        (C, [128, 128, 64], 36864),
        (B, [128, 128, 64], 64),
        (C, [128, 128, 64], 36864),
        (B, [128, 128, 64], 64),
        (C, [128, 128, 64], 36864),
        (B, [128, 128, 64], 64),
        (C, [64, 64, 128], 73728),
        (B, [64, 64, 128], 128),
        (C, [64, 64, 128], 147456),
        (B, [64, 64, 128], 128),
        (C, [64, 64, 128], 147456),
        (B, [64, 64, 128], 128),
        (C, [64, 64, 128], 147456),
        (B, [64, 64, 128], 128),
        (C, [32, 32, 256], 294912),
        (B, [32, 32, 256], 256),
        (C, [32, 32, 256], 589824),
        (B, [32, 32, 256], 256),
        (C, [32, 32, 256], 589824),
        (B, [32, 32, 256], 256),
        (C, [32, 32, 256], 589824),
        (B, [32, 32, 256], 256),
        (C, [16, 16, 512], 1179648),
        (B, [16, 16, 512], 512),
        (C, [16, 16, 512], 2359296),
        (B, [16, 16, 512], 512),
        (C, [16, 16, 512], 2359296),
        (B, [16, 16, 512], 512),
        (C, [16, 16, 512], 2359296),
        (B, [16, 16, 512], 512),
        (P, [1, 1, 512], 67108864),
        (L, [1, 1, 4], 2048),
    ]
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMatch {
    Yes,
    No,
    /// Row exists in the model but not in the reference table.
    AbsentFromTable,
    /// Reference row is known to be wrong (pooling has no parameters).
    Erratum,
    /// No reference table for this configuration.
    NotApplicable,
}

impl TableMatch {
    pub fn as_str(self) -> &'static str {
        match self {
            TableMatch::Yes => "yes",
            TableMatch::No => "no",
            TableMatch::AbsentFromTable => "absent-from-table",
            TableMatch::Erratum => "erratum",
            TableMatch::NotApplicable => "n/a",
        }
    }
}

impl fmt::Display for TableMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub layer: String,
    pub label: String,
    pub kind: RowKind,
    /// `(H, W, C)` as printed in the reference table.
    pub shape: [usize; 3],
    /// Trainable parameters actually allocated.
    pub params: usize,
    /// Count under the reference table's convention (one per channel for
    /// batch norm, otherwise identical to `params`).
    pub table_convention: usize,
    pub table_params: Option<u64>,
    pub table_match: TableMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub model: ModelKind,
    pub rows: Vec<AuditRow>,
    pub total_params: usize,
    pub total_table_convention: usize,
    pub compared_to_table: bool,
}

impl AuditReport {
    pub fn mismatches(&self) -> Vec<&AuditRow> {
        self.rows.iter().filter(|r| r.table_match == TableMatch::No).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,shape,params,table_match\n");
        for r in &self.rows {
            let [h, w, c] = r.shape;
            let _ = writeln!(s, "{},\"{h},{w},{c}\",{},{}", r.layer, r.params, r.table_match);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:<20} {:>14} {:>10} {:>12} {:>12}  match",
            "layer", "type", "output shape", "params", "table-conv", "table"
        );
        for r in &self.rows {
            let [h, w, c] = r.shape;
            let table = r.table_params.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(
                s,
                "{:<18} {:<20} {:>14} {:>10} {:>12} {:>12}  {}",
                r.layer,
                r.label,
                format!("{h},{w},{c}"),
                r.params,
                r.table_convention,
                table,
                r.table_match
            );
        }
        let _ = writeln!(s, "total trainable parameters: {}", self.total_params);
        let _ = writeln!(s, "total under table convention (BN = C): {}", self.total_table_convention);
        if self.compared_to_table {
            let n = self.mismatches().len();
            let _ = writeln!(s, "reference-table mismatches: {n}");
            let _ = writeln!(s, "note: projection shortcuts are absent from the reference table; its pooling row (67108864) is an erratum, pooling has 0 parameters");
        }
        s
    }
}

fn conv_row<T: Scalar>(layer: String, conv: &Conv2d<T>, kind: RowKind, input: [usize; 3]) -> Result<(AuditRow, [usize; 3])> {
    let out = conv.output_dims(input)?;
    let g = conv.geom;
    let label = if kind == RowKind::Projection {
        format!("Conv2d({},{},{}) proj", g.in_channels, g.kernel, g.stride)
    } else {
        format!("Conv2d({},{},{})", g.in_channels, g.kernel, g.stride)
    };
    Ok((row(layer, label, kind, out, conv.param_count(), conv.param_count()), out))
}

fn bn_row<T: Scalar>(layer: String, bn: &BatchNorm2d<T>, kind: RowKind, dims: [usize; 3]) -> AuditRow {
    row(layer, "BatchNorm2d".into(), kind, dims, bn.param_count(), bn.channels)
}

fn row(layer: String, label: String, kind: RowKind, [c, h, w]: [usize; 3], params: usize, table_convention: usize) -> AuditRow {
    AuditRow { layer, label, kind, shape: [h, w, c], params, table_convention, table_params: None, table_match: TableMatch::NotApplicable }
}

fn block_rows<T: Scalar>(name: &str, b: &BasicBlock<T>, input: [usize; 3], rows: &mut Vec<AuditRow>) -> Result<[usize; 3]> {
    let (r, mid) = conv_row(format!("{name}.conv1"), &b.conv1, RowKind::Conv, input)?;
    rows.push(r);
    rows.push(bn_row(format!("{name}.bn1"), &b.bn1, RowKind::BatchNorm, mid));
    let (r, out) = conv_row(format!("{name}.conv2"), &b.conv2, RowKind::Conv, mid)?;
    rows.push(r);
    rows.push(bn_row(format!("{name}.bn2"), &b.bn2, RowKind::BatchNorm, out));
    if let Some(p) = &b.projection {
        let (r, pout) = conv_row(format!("{name}.proj"), &p.conv, RowKind::Projection, input)?;
        rows.push(r);
        rows.push(bn_row(format!("{name}.proj_bn"), &p.bn, RowKind::ProjectionBn, pout));
    }
    Ok(out)
}

/// Enumerates every parameterized or shape-changing layer with its output
/// shape and parameter count. ReLU and dropout rows are omitted.
pub fn audit_params<T: Scalar>(graph: &ModelGraph<T>) -> Result<AuditReport> {
    let mut rows = Vec::new();
    let mut dims = graph.input_dims();
    for (name, layer) in &graph.layers {
        let out = layer.output_dims(dims)?;
        match layer {
            LayerNode::Conv(c) => rows.push(conv_row(name.clone(), c, RowKind::Conv, dims)?.0),
            LayerNode::BatchNorm(bn) => rows.push(bn_row(name.clone(), bn, RowKind::BatchNorm, out)),
            LayerNode::Block(b) => {
                block_rows(name, b, dims, &mut rows)?;
            }
            LayerNode::MaxPool(_) => rows.push(row(name.clone(), "MaxPool2d(2)".into(), RowKind::Pool, out, 0, 0)),
            LayerNode::GlobalAvgPool(_) => rows.push(row(name.clone(), "AdaptiveAvgPool2d".into(), RowKind::Pool, out, 0, 0)),
            LayerNode::Flatten(_) => rows.push(row(name.clone(), "Flatten".into(), RowKind::Flatten, out, 0, 0)),
            LayerNode::Linear(l) => rows.push(row(name.clone(), format!("Linear({},{})", l.in_features, l.out_features), RowKind::Linear, out, l.param_count(), l.param_count())),
            LayerNode::Relu(_) | LayerNode::Dropout(_) => {}
        }
        dims = out;
    }

    let compared = graph.kind == ModelKind::ResNet && graph.config.side == 128 && graph.config.width_mult == 1.0;
    if compared {
        let mut reference = TABLE1_ROWS.iter();
        for r in rows.iter_mut() {
            match r.kind {
                RowKind::Projection | RowKind::ProjectionBn => r.table_match = TableMatch::AbsentFromTable,
                RowKind::Flatten => {}
                _ => match reference.next() {
                    Some(&(kind, shape, count)) => {
                        r.table_params = Some(count);
                        r.table_match = if kind != r.kind || shape != r.shape {
                            TableMatch::No
                        } else if kind == RowKind::Pool {
                            TableMatch::Erratum
                        } else if r.table_convention as u64 == count {
                            TableMatch::Yes
                        } else {
                            TableMatch::No
                        };
                    }
                    None => r.table_match = TableMatch::No,
                },
            }
        }
    }
    let total_params = rows.iter().map(|r| r.params).sum();
    debug_assert_eq!(total_params, graph.param_count());
    let total_table_convention = rows.iter().map(|r| r.table_convention).sum();
    Ok(AuditReport { model: graph.kind, rows, total_params, total_table_convention, compared_to_table: compared })
}
