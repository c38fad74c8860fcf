use super::quant::QuantParams;
use crate::approx::MultiplierModel;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Padding, Tensor};

/// Convolution evaluated the way an 8-bit fixed-point accelerator would:
/// operands are quantized, every product goes through `mult`, and integer
/// sums are dequantized with the affine correction terms
///
/// `y = sx*sw*sum(P') + sx*mw*sum(a) + sw*mx*sum(w) + n*mx*mw`
///
/// where `x = mx + sx*a` and `w = mw + sw*w_code`. Padded taps contribute
/// nothing, matching zero padding in the real-valued convolution.
pub fn fixed_point_conv(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: Padding,
    mult: &MultiplierModel,
    q_in: &QuantParams,
    q_w: &QuantParams,
) -> Result<Tensor> {
    if q_in.bits != 8 || q_w.bits != 8 {
        return Err(Error::InvalidArgument(
            "fixed-point convolution requires 8-bit operands".into(),
        ));
    }
    let g = ConvGeometry::new(input.shape(), kernels.shape(), stride, padding)?;
    let a_codes: Vec<u8> = input.data().iter().map(|&v| q_in.quantize_value(v) as u8).collect();
    let w_codes: Vec<u8> = kernels.data().iter().map(|&v| q_w.quantize_value(v) as u8).collect();

    let (sx, mx) = (q_in.step(), q_in.min);
    let (sw, mw) = (q_w.step(), q_w.min);

    let mut out = Vec::with_capacity(g.output_len());
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            for co in 0..g.cout {
                let index = out.len();
                let mut products: u32 = 0;
                let mut sum_a: u32 = 0;
                let mut sum_w: u32 = 0;
                let mut taps: u32 = 0;
                for ky in 0..g.k {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        for ci in 0..g.cin {
                            let a = a_codes[(iy * g.in_w + ix) * g.cin + ci];
                            let w = w_codes[((ky * g.k + kx) * g.cin + ci) * g.cout + co];
                            products = products
                                .checked_add(u32::from(mult.multiply(a, w)))
                                .ok_or(Error::AccumulatorOverflow(index))?;
                            sum_a += u32::from(a);
                            sum_w += u32::from(w);
                            taps += 1;
                        }
                    }
                }
                out.push(
                    sx * sw * f64::from(products)
                        + sx * mw * f64::from(sum_a)
                        + sw * mx * f64::from(sum_w)
                        + f64::from(taps) * mx * mw,
                );
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, g.cout], out)
}
