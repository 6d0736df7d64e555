//! Scalar runtime values and conversion semantics.
//!
//! Integers and fixed-point values are carried as raw two's-complement `i128`
//! words (for fixed point, the raw word is `value * 2^f`). Floats are carried
//! as `f64` and rounded to the declared width only when stored. Intermediate
//! arithmetic never wraps; wrapping happens exclusively in [`store_cast`],
//! which truncates integers modulo `2^w`, floor-shifts fixed-point values to
//! the target fractional width before wrapping, and rounds floats.

use crate::types::ElemType;

/// A scalar value tagged with its element type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    /// Raw two's-complement word for `int`/`uint`/`index`/`fixed`/`ufixed`.
    Raw(i128),
    Float(f64),
}

impl Scalar {
    pub fn raw(self) -> i128 {
        match self {
            Scalar::Raw(v) => v,
            Scalar::Float(f) => f as i128,
        }
    }

    pub fn float(self) -> f64 {
        match self {
            Scalar::Raw(v) => v as f64,
            Scalar::Float(f) => f,
        }
    }
}

/// Sign- or zero-extend the low `w` bits of `raw` according to `ty`.
/// This is the canonical in-memory form: stored values are always normalized.
pub fn normalize(ty: &ElemType, raw: i128) -> i128 {
    let w = ty.width();
    if w >= 128 {
        return raw;
    }
    let mask = (1i128 << w) - 1;
    let low = raw & mask;
    if ty.is_signed() && (low >> (w - 1)) & 1 == 1 {
        low | !mask
    } else {
        low
    }
}

/// Convert an f64 to IEEE binary16, round-to-nearest-even, returned as f64.
pub fn round_f16(x: f64) -> f64 {
    let f = x as f32;
    let bits = f.to_bits();
    let sign = bits >> 31;
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = bits & 0x7f_ffff;
    // Decompose, re-round the 23-bit fraction to 10 bits.
    let half: u16 = if exp == 0xff {
        // Inf/NaN.
        ((sign as u16) << 15) | 0x7c00 | if frac != 0 { 0x200 } else { 0 }
    } else {
        let unbiased = exp - 127;
        if unbiased > 15 {
            ((sign as u16) << 15) | 0x7c00 // overflow -> inf
        } else if unbiased >= -14 {
            // Normal half.
            let mut mant = frac >> 13;
            let rest = frac & 0x1fff;
            if rest > 0x1000 || (rest == 0x1000 && mant & 1 == 1) {
                mant += 1;
            }
            let mut e = (unbiased + 15) as u32;
            if mant == 0x400 {
                mant = 0;
                e += 1;
            }
            if e >= 31 {
                ((sign as u16) << 15) | 0x7c00
            } else {
                ((sign as u16) << 15) | ((e as u16) << 10) | (mant as u16)
            }
        } else if unbiased >= -25 {
            // Subnormal half: mant = round(full * 2^(unbiased+1)).
            let drop = (-1 - unbiased) as u32; // 14..24
            let full = 0x80_0000 | frac; // implicit leading 1
            let mut mant = full >> drop;
            let rest = full & ((1u32 << drop) - 1);
            let halfway = 1u32 << (drop - 1);
            if rest > halfway || (rest == halfway && mant & 1 == 1) {
                mant += 1;
            }
            if mant >= 0x400 {
                ((sign as u16) << 15) | (1 << 10)
            } else {
                ((sign as u16) << 15) | mant as u16
            }
        } else {
            (sign as u16) << 15 // underflow to signed zero
        }
    };
    // Decode half back to f64.
    let s = if half >> 15 == 1 { -1.0 } else { 1.0 };
    let e = ((half >> 10) & 0x1f) as i32;
    let m = (half & 0x3ff) as f64;
    match e {
        0 => s * m * (2.0f64).powi(-24),
        0x1f => {
            if m == 0.0 {
                s * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => s * (1.0 + m / 1024.0) * (2.0f64).powi(e - 15),
    }
}

/// Store `value` (an intermediate with effective fractional width `src_frac`
/// when raw) into a location of type `dst`. Implements the store-cast:
/// integers wrap modulo `2^w`; fixed point floor-shifts to the destination
/// fractional width and then wraps; floats round to the declared width.
/// Returns the normalized in-memory scalar.
pub fn store_cast(dst: &ElemType, value: Scalar, src_frac: u32) -> Scalar {
    match dst {
        ElemType::Float(w) => {
            let f = value.float();
            Scalar::Float(match w {
                16 => round_f16(f),
                32 => f as f32 as f64,
                _ => f,
            })
        }
        _ => {
            let raw = match value {
                Scalar::Raw(v) => shift_frac(v, src_frac, dst.frac_bits()),
                // Float into integral/fixed store: truncate toward zero after
                // scaling into the destination's fractional grid. Reached only
                // through explicit casts (the checker rejects implicit mixes).
                Scalar::Float(f) => {
                    let scaled = f * (2.0f64).powi(dst.frac_bits() as i32);
                    scaled.trunc() as i128
                }
            };
            Scalar::Raw(normalize(dst, raw))
        }
    }
}

/// Shift a raw fixed-point word from `from` fractional bits to `to`
/// fractional bits, flooring on narrowing (arithmetic right shift).
pub fn shift_frac(raw: i128, from: u32, to: u32) -> i128 {
    use std::cmp::Ordering::*;
    match from.cmp(&to) {
        Equal => raw,
        Greater => raw >> (from - to),
        Less => raw << (to - from),
    }
}

/// Exact decimal rendering of a stored scalar, for tensor I/O.
pub fn render_scalar(ty: &ElemType, s: Scalar) -> String {
    match (ty, s) {
        (ElemType::Float(_), Scalar::Float(f)) => format!("{f:?}"),
        (ElemType::Fixed(_, f) | ElemType::UFixed(_, f), Scalar::Raw(raw)) => {
            // A binary fraction is a finite decimal: render exactly.
            render_fixed(raw, *f)
        }
        (ty, Scalar::Raw(raw)) if !ty.is_signed() => format!("{}", raw as u128 & mask_u(ty.width())),
        (_, Scalar::Raw(raw)) => format!("{raw}"),
        (ty, v) => panic!("scalar {v:?} does not match type {ty}"),
    }
}

fn mask_u(w: u32) -> u128 {
    if w >= 128 {
        u128::MAX
    } else {
        (1u128 << w) - 1
    }
}

fn render_fixed(raw: i128, f: u32) -> String {
    if f == 0 {
        return format!("{raw}");
    }
    let neg = raw < 0;
    let mag = raw.unsigned_abs();
    let int = mag >> f;
    let mut frac = mag & ((1u128 << f) - 1);
    if frac == 0 {
        return format!("{}{int}", if neg { "-" } else { "" });
    }
    // frac / 2^f as decimal digits: multiply by 10 repeatedly.
    let mut digits = String::new();
    while frac != 0 {
        frac *= 10;
        digits.push(char::from(b'0' + (frac >> f) as u8));
        frac &= (1u128 << f) - 1;
    }
    format!("{}{int}.{digits}", if neg { "-" } else { "" })
}

/// Parse a decimal literal into a stored scalar of type `ty`. For fixed point
/// the value must land exactly on the `2^-f` grid; for integers it must be a
/// whole number in range after wrapping is *not* applied (I/O is strict).
pub fn parse_scalar(ty: &ElemType, text: &str) -> Result<Scalar, String> {
    match ty {
        ElemType::Float(_) => {
            let f: f64 = text.parse().map_err(|_| format!("bad float literal `{text}`"))?;
            Ok(store_cast(ty, Scalar::Float(f), 0))
        }
        ElemType::Fixed(_, fb) | ElemType::UFixed(_, fb) => {
            let raw = parse_fixed_exact(text, *fb)?;
            let stored = normalize(ty, raw);
            if stored != raw {
                return Err(format!("value {text} out of range for {ty}"));
            }
            Ok(Scalar::Raw(raw))
        }
        _ => {
            let v: i128 = if let Some(hex) = text.strip_prefix("0x") {
                i128::from_str_radix(hex, 16).map_err(|_| format!("bad integer literal `{text}`"))?
            } else {
                text.parse().map_err(|_| format!("bad integer literal `{text}`"))?
            };
            let stored = normalize(ty, v);
            if stored != v {
                return Err(format!("value {text} out of range for {ty}"));
            }
            Ok(Scalar::Raw(v))
        }
    }
}

fn parse_fixed_exact(text: &str, f: u32) -> Result<i128, String> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, fr)) => (i, fr),
        None => (body, ""),
    };
    let int: i128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| format!("bad fixed literal `{text}`"))?
    };
    // frac_part as numerator/10^k; scale by 2^f and require exactness.
    let mut num: i128 = 0;
    let mut den: i128 = 1;
    for c in frac_part.chars() {
        let d = c.to_digit(10).ok_or_else(|| format!("bad fixed literal `{text}`"))? as i128;
        num = num * 10 + d;
        den *= 10;
    }
    let scaled_num = num << f;
    if scaled_num % den != 0 {
        return Err(format!(
            "literal {text} is not representable with {f} fractional bits"
        ));
    }
    let raw = (int << f) + scaled_num / den;
    Ok(if neg { -raw } else { raw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ElemType::*;

    #[test]
    fn fixed_product_floor_shifts() {
        // fixed(8,4): 1.5 has raw 24, 2.25 has raw 36. The product is raw
        // 864 at 8 fractional bits; storing back to fixed(8,4) floor-shifts
        // to raw 54 = 3.375.
        let a = parse_scalar(&Fixed(8, 4), "1.5").unwrap();
        let b = parse_scalar(&Fixed(8, 4), "2.25").unwrap();
        assert_eq!(a, Scalar::Raw(24));
        assert_eq!(b, Scalar::Raw(36));
        let product = a.raw() * b.raw(); // frac bits add: 8
        assert_eq!(product, 864);
        let stored = store_cast(&Fixed(8, 4), Scalar::Raw(product), 8);
        assert_eq!(stored, Scalar::Raw(54));
        assert_eq!(render_scalar(&Fixed(8, 4), stored), "3.375");
    }

    #[test]
    fn int_store_wraps_two_complement() {
        let v = store_cast(&Int(8), Scalar::Raw(300), 0);
        assert_eq!(v, Scalar::Raw(300 - 256)); // 300 mod 256, sign-extended
        let v = store_cast(&Int(8), Scalar::Raw(128), 0);
        assert_eq!(v, Scalar::Raw(-128));
        let v = store_cast(&UInt(8), Scalar::Raw(-1), 0);
        assert_eq!(v, Scalar::Raw(255));
    }

    #[test]
    fn float_store_rounds_width() {
        let v = store_cast(&Float(32), Scalar::Float(1.0000000001), 0);
        assert_eq!(v, Scalar::Float(1.0));
        let v = store_cast(&Float(16), Scalar::Float(1.0009765625), 0); // 1 + 2^-10
        assert_eq!(v, Scalar::Float(1.0009765625));
        let v = store_cast(&Float(16), Scalar::Float(1.0001), 0);
        assert_eq!(v, Scalar::Float(1.0)); // rounds to nearest half
        let v = store_cast(&Float(16), Scalar::Float(70000.0), 0);
        assert_eq!(v, Scalar::Float(f64::INFINITY));
    }

    #[test]
    fn f16_subnormals_round_trip() {
        let tiny = (2.0f64).powi(-24); // smallest subnormal half
        assert_eq!(round_f16(tiny), tiny);
        assert_eq!(round_f16(tiny / 4.0), 0.0);
        let x = 6.103515625e-05; // 2^-14, smallest normal
        assert_eq!(round_f16(x), x);
    }

    #[test]
    fn fixed_render_and_parse_round_trip() {
        for text in ["0", "-1", "3.375", "-0.0625", "7.9375"] {
            let s = parse_scalar(&Fixed(8, 4), text).unwrap();
            assert_eq!(render_scalar(&Fixed(8, 4), s), text);
        }
        assert!(parse_scalar(&Fixed(8, 4), "0.2").is_err()); // not on the grid
        assert!(parse_scalar(&Fixed(8, 4), "8.0").is_err()); // out of range
    }

    #[test]
    fn unsigned_render_uses_unsigned_view() {
        let v = store_cast(&UInt(8), Scalar::Raw(250), 0);
        assert_eq!(render_scalar(&UInt(8), v), "250");
    }
}
