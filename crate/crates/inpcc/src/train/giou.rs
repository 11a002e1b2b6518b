//! IoU and generalized IoU on cxcywh boxes: plain f64 for the matcher and a
//! graph composite for the loss. Both routes must agree to float precision.

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// [cx, cy, w, h] → [x1, y1, x2, y2].
pub fn cxcywh_to_xyxy(b: [Scalar; 4]) -> [Scalar; 4] {
    let [cx, cy, w, h] = b;
    [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
}

fn check_box(b: [Scalar; 4], ctx: &str) -> Result<()> {
    if !(b[2] > 0.0 && b[3] > 0.0 && b.iter().all(|x| x.is_finite())) {
        return Err(Error::Parameter(format!(
            "degenerate {ctx} box [cx={}, cy={}, w={}, h={}]",
            b[0], b[1], b[2], b[3]
        )));
    }
    Ok(())
}

/// Plain IoU of two xyxy boxes with positive extents.
pub fn iou_xyxy(a: [Scalar; 4], b: [Scalar; 4]) -> Scalar {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area_a + area_b - inter)
}

/// Generalized IoU of two cxcywh boxes, in (−1, 1].
pub fn giou(box_a: [Scalar; 4], box_b: [Scalar; 4]) -> Result<Scalar> {
    check_box(box_a, "first")?;
    check_box(box_b, "second")?;
    let a = cxcywh_to_xyxy(box_a);
    let b = cxcywh_to_xyxy(box_b);
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    let ex = a[2].max(b[2]) - a[0].min(b[0]);
    let ey = a[3].max(b[3]) - a[1].min(b[1]);
    let enclose = ex * ey;
    Ok(inter / union - (enclose - union) / enclose)
}

/// One coordinate of a [1,4] box row as a [1,1] graph scalar.
fn coord(row: &Tensor, i: usize) -> Result<Tensor> {
    row.slice_cols(i, i + 1)
}

/// xyxy corners of a [1,4] cxcywh box row, as graph scalars.
fn corners(row: &Tensor) -> Result<[Tensor; 4]> {
    let cx = coord(row, 0)?;
    let cy = coord(row, 1)?;
    let w = coord(row, 2)?;
    let h = coord(row, 3)?;
    Ok([
        cx.add(&w.scale(-0.5))?,
        cy.add(&h.scale(-0.5))?,
        cx.add(&w.scale(0.5))?,
        cy.add(&h.scale(0.5))?,
    ])
}

/// Differentiable GIoU between a predicted [1,4] cxcywh box row (tracked)
/// and a constant ground-truth box. Same arithmetic as `giou`, expressed in
/// graph ops; min/max kinks carry the subgradient of the selected operand.
pub fn giou_node(pred_row: &Tensor, gt: [Scalar; 4]) -> Result<Tensor> {
    check_box(gt, "ground-truth")?;
    let g = cxcywh_to_xyxy(gt);
    let gt_row = Tensor::new(&[1, 4], g.to_vec())?;
    let [ax1, ay1, ax2, ay2] = corners(pred_row)?;
    let [bx1, by1, bx2, by2] = [
        coord(&gt_row, 0)?,
        coord(&gt_row, 1)?,
        coord(&gt_row, 2)?,
        coord(&gt_row, 3)?,
    ];

    let iw = ax2.minimum(&bx2)?.sub(&ax1.maximum(&bx1)?)?.relu();
    let ih = ay2.minimum(&by2)?.sub(&ay1.maximum(&by1)?)?.relu();
    let inter = iw.hadamard(&ih)?;

    let area_a = ax2.sub(&ax1)?.hadamard(&ay2.sub(&ay1)?)?;
    let area_b = bx2.sub(&bx1)?.hadamard(&by2.sub(&by1)?)?;
    let union = area_a.add(&area_b)?.sub(&inter)?;

    let ew = ax2.maximum(&bx2)?.sub(&ax1.minimum(&bx1)?)?;
    let eh = ay2.maximum(&by2)?.sub(&ay1.minimum(&by1)?)?;
    let enclose = ew.hadamard(&eh)?;

    let iou = inter.div(&union)?;
    let penalty = enclose.sub(&union)?.div(&enclose)?;
    iou.sub(&penalty)
}
