//! Element and tensor types, promotion rules, and scalar conversions.
//!
//! The element grammar covers `int(w)`/`uint(w)` for 1 <= w <= 128, `index`,
//! `float16/32/64`, and `fixed(w, f)`/`ufixed(w, f)` with 0 <= f <= w.
//! Arithmetic never overflows an annotated intermediate type: integer adds get
//! one extra bit over the wider operand, integer multiplies get the sum of the
//! operand widths, and fixed multiplies get `fixed(w1+w2, f1+f2)`. Narrowing
//! happens only at stores (wrap for ints, floor-then-wrap for fixed, rounding
//! for floats); implicit conversion is widening-only and never crosses the
//! float/integer family boundary.

use crate::diag::{Diag, Result, Span};
use std::fmt;

/// Maximum representable integer width; intermediates are capped here so that
/// raw two's-complement values always fit in an `i128`.
pub const MAX_WIDTH: u32 = 128;

/// A scalar element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElemType {
    Int(u32),
    UInt(u32),
    /// Loop-index type; behaves as a signed 64-bit integer in arithmetic.
    Index,
    Float(u32),
    /// `fixed(w, f)`: signed, `w` total bits, `f` fractional bits.
    Fixed(u32, u32),
    /// `ufixed(w, f)`: unsigned fixed point.
    UFixed(u32, u32),
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemType::Int(w) => write!(f, "int{w}"),
            ElemType::UInt(w) => write!(f, "uint{w}"),
            ElemType::Index => write!(f, "index"),
            ElemType::Float(w) => write!(f, "float{w}"),
            ElemType::Fixed(w, fr) => write!(f, "fixed({w}, {fr})"),
            ElemType::UFixed(w, fr) => write!(f, "ufixed({w}, {fr})"),
        }
    }
}

impl ElemType {
    /// Validate the width constraints from the type grammar.
    pub fn validate(&self, span: Span, file: &str) -> Result<()> {
        let bad = |msg: String| Err(Diag::user(file, span, msg));
        match *self {
            ElemType::Int(w) | ElemType::UInt(w) => {
                if w == 0 || w > MAX_WIDTH {
                    return bad(format!("integer width {w} out of range 1..{MAX_WIDTH}"));
                }
            }
            ElemType::Float(w) => {
                if !matches!(w, 16 | 32 | 64) {
                    return bad(format!("float width {w} must be 16, 32 or 64"));
                }
            }
            ElemType::Fixed(w, f) | ElemType::UFixed(w, f) => {
                if w == 0 || w > MAX_WIDTH {
                    return bad(format!("fixed width {w} out of range 1..{MAX_WIDTH}"));
                }
                if f > w {
                    return bad(format!("fixed fractional bits {f} exceed width {w}"));
                }
            }
            ElemType::Index => {}
        }
        Ok(())
    }

    pub fn is_float(&self) -> bool {
        matches!(self, ElemType::Float(_))
    }

    pub fn is_integral(&self) -> bool {
        matches!(self, ElemType::Int(_) | ElemType::UInt(_) | ElemType::Index)
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ElemType::Fixed(..) | ElemType::UFixed(..))
    }

    pub fn is_signed(&self) -> bool {
        matches!(
            self,
            ElemType::Int(_) | ElemType::Index | ElemType::Fixed(..) | ElemType::Float(_)
        )
    }

    /// Total bit width (for `index`, its 64-bit carrier).
    pub fn width(&self) -> u32 {
        match *self {
            ElemType::Int(w) | ElemType::UInt(w) => w,
            ElemType::Index => 64,
            ElemType::Float(w) => w,
            ElemType::Fixed(w, _) | ElemType::UFixed(w, _) => w,
        }
    }

    pub fn frac_bits(&self) -> u32 {
        match *self {
            ElemType::Fixed(_, f) | ElemType::UFixed(_, f) => f,
            _ => 0,
        }
    }

    /// `true` if a value of `self` can be implicitly used where `other` is
    /// expected: widening within the same family only.
    pub fn widens_to(&self, other: &ElemType) -> bool {
        use ElemType::*;
        if self == other {
            return true;
        }
        match (*self, *other) {
            (Int(a), Int(b)) => a <= b,
            (UInt(a), UInt(b)) => a <= b,
            // An unsigned value fits in a signed type with one spare bit.
            (UInt(a), Int(b)) => a < b,
            (Index, Int(b)) => b >= 64,
            (Index, Index) => true,
            (Int(_) | UInt(_), Index) => false,
            (Float(a), Float(b)) => a <= b,
            (Fixed(w1, f1), Fixed(w2, f2)) => f2 >= f1 && (w2 - f2) >= (w1 - f1),
            (UFixed(w1, f1), UFixed(w2, f2)) => f2 >= f1 && (w2 - f2) >= (w1 - f1),
            (UFixed(w1, f1), Fixed(w2, f2)) => f2 >= f1 && (w2 - f2) > (w1 - f1),
            _ => false,
        }
    }
}

fn cap(w: u32) -> u32 {
    w.min(MAX_WIDTH)
}

/// Binary operator kinds that participate in promotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

/// Intermediate type of `lhs op rhs`, or a description of why the combination
/// is illegal. Additions gain a bit, multiplies add widths, fixed multiplies
/// add widths and fractional bits; the float/integer boundary is never crossed
/// implicitly.
pub fn promote(op: BinKind, lhs: &ElemType, rhs: &ElemType) -> std::result::Result<ElemType, String> {
    use ElemType::*;
    // Same-family normalization: treat index as int64 when mixed with ints.
    let norm = |t: &ElemType| -> ElemType {
        match *t {
            Index => Int(64),
            other => other,
        }
    };
    if matches!((lhs, rhs), (Index, Index)) {
        return Ok(Index);
    }
    let (a, b) = (norm(lhs), norm(rhs));
    match (a, b) {
        (Float(w1), Float(w2)) => Ok(Float(w1.max(w2))),
        (Float(_), _) | (_, Float(_)) => Err(format!(
            "no implicit conversion between {lhs} and {rhs}; use an explicit cast"
        )),
        (Int(w1), Int(w2)) => Ok(match op {
            BinKind::Add | BinKind::Sub => Int(cap(w1.max(w2) + 1)),
            BinKind::Mul => Int(cap(w1 + w2)),
            BinKind::Div | BinKind::Rem => Int(w1.max(w2)),
        }),
        (UInt(w1), UInt(w2)) => Ok(match op {
            BinKind::Add => UInt(cap(w1.max(w2) + 1)),
            // Subtraction of unsigned values may go negative: promote to signed.
            BinKind::Sub => Int(cap(w1.max(w2) + 1)),
            BinKind::Mul => UInt(cap(w1 + w2)),
            BinKind::Div | BinKind::Rem => UInt(w1.max(w2)),
        }),
        // Mixed signedness: widen the unsigned side into signed first.
        (Int(ws), UInt(wu)) | (UInt(wu), Int(ws)) => {
            promote(op, &Int(ws), &Int(cap(wu + 1)))
        }
        (Fixed(w1, f1), Fixed(w2, f2)) => Ok(match op {
            BinKind::Add | BinKind::Sub => {
                let int_bits = (w1 - f1).max(w2 - f2);
                let f = f1.max(f2);
                Fixed(cap(int_bits + f + 1), f)
            }
            BinKind::Mul => Fixed(cap(w1 + w2), f1 + f2),
            BinKind::Div | BinKind::Rem => Fixed(w1.max(w2), f1.max(f2)),
        }),
        (UFixed(w1, f1), UFixed(w2, f2)) => Ok(match op {
            BinKind::Add => {
                let int_bits = (w1 - f1).max(w2 - f2);
                let f = f1.max(f2);
                UFixed(cap(int_bits + f + 1), f)
            }
            BinKind::Sub => {
                let int_bits = (w1 - f1).max(w2 - f2);
                let f = f1.max(f2);
                Fixed(cap(int_bits + f + 1), f)
            }
            BinKind::Mul => UFixed(cap(w1 + w2), f1 + f2),
            BinKind::Div | BinKind::Rem => UFixed(w1.max(w2), f1.max(f2)),
        }),
        (Fixed(ws, fs), UFixed(wu, fu)) | (UFixed(wu, fu), Fixed(ws, fs)) => {
            promote(op, &Fixed(ws, fs), &Fixed(cap(wu + 1), fu))
        }
        // Fixed and integer mix: an int(w) is a fixed(w, 0).
        (Fixed(w1, f1), Int(w2)) | (Int(w2), Fixed(w1, f1)) => {
            promote(op, &Fixed(w1, f1), &Fixed(w2, 0))
        }
        (UFixed(w1, f1), UInt(w2)) | (UInt(w2), UFixed(w1, f1)) => {
            promote(op, &UFixed(w1, f1), &UFixed(w2, 0))
        }
        (Fixed(w1, f1), UInt(w2)) | (UInt(w2), Fixed(w1, f1)) => {
            promote(op, &Fixed(w1, f1), &Fixed(cap(w2 + 1), 0))
        }
        (UFixed(w1, f1), Int(w2)) | (Int(w2), UFixed(w1, f1)) => {
            promote(op, &Fixed(cap(w1 + 1), f1), &Fixed(w2, 0))
        }
        (Index, _) | (_, Index) => unreachable!("index normalized above"),
    }
}

/// A tensor type: element type plus a static shape. Rank 0 is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorType {
    pub elem: ElemType,
    pub shape: Vec<u64>,
}

impl TensorType {
    pub fn scalar(elem: ElemType) -> Self {
        TensorType { elem, shape: Vec::new() }
    }

    pub fn new(elem: ElemType, shape: Vec<u64>) -> Self {
        TensorType { elem, shape }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn num_elems(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn validate(&self, span: Span, file: &str) -> Result<()> {
        self.elem.validate(span, file)?;
        for &s in &self.shape {
            if s == 0 {
                return Err(Diag::user(file, span, "tensor extent must be positive"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.elem)?;
        if !self.shape.is_empty() {
            write!(f, "[")?;
            for (i, s) in self.shape.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{s}")?;
            }
            write!(f, "]")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ElemType::*;

    #[test]
    fn int_mul_adds_widths() {
        // int8 * int8 -> int16 (the product of two 8-bit values needs 16 bits).
        assert_eq!(promote(BinKind::Mul, &Int(8), &Int(8)).unwrap(), Int(16));
    }

    #[test]
    fn int_add_gains_one_bit() {
        // int16 + int16 -> int17: accumulating a product into a 16-bit
        // accumulator yields a 17-bit intermediate before the store cast.
        assert_eq!(promote(BinKind::Add, &Int(16), &Int(16)).unwrap(), Int(17));
        assert_eq!(promote(BinKind::Add, &Int(8), &Int(16)).unwrap(), Int(17));
    }

    #[test]
    fn fixed_mul_adds_widths_and_fracs() {
        assert_eq!(
            promote(BinKind::Mul, &Fixed(8, 4), &Fixed(8, 4)).unwrap(),
            Fixed(16, 8)
        );
    }

    #[test]
    fn float_int_mix_is_rejected() {
        assert!(promote(BinKind::Add, &Float(32), &Int(8)).is_err());
        assert!(promote(BinKind::Mul, &Int(32), &Float(64)).is_err());
    }

    #[test]
    fn float_widens() {
        assert_eq!(promote(BinKind::Add, &Float(32), &Float(64)).unwrap(), Float(64));
    }

    #[test]
    fn widening_stays_in_family() {
        assert!(Int(8).widens_to(&Int(16)));
        assert!(!Int(16).widens_to(&Int(8)));
        assert!(UInt(8).widens_to(&Int(9)));
        assert!(!UInt(8).widens_to(&Int(8)));
        assert!(!Float(32).widens_to(&Int(32)));
        assert!(!Int(32).widens_to(&Float(32)));
        assert!(Fixed(8, 4).widens_to(&Fixed(10, 5)));
        assert!(!Fixed(8, 4).widens_to(&Fixed(8, 5)));
    }

    #[test]
    fn width_cap_holds() {
        assert_eq!(promote(BinKind::Mul, &Int(128), &Int(128)).unwrap(), Int(128));
        assert_eq!(promote(BinKind::Add, &Int(128), &Int(128)).unwrap(), Int(128));
    }

    #[test]
    fn index_arithmetic_stays_index() {
        assert_eq!(promote(BinKind::Add, &Index, &Index).unwrap(), Index);
        assert_eq!(promote(BinKind::Mul, &Index, &Int(8)).unwrap(), Int(72));
    }

    #[test]
    fn validates_widths() {
        assert!(Int(0).validate(Span::none(), "t").is_err());
        assert!(Int(129).validate(Span::none(), "t").is_err());
        assert!(Float(24).validate(Span::none(), "t").is_err());
        assert!(Fixed(8, 9).validate(Span::none(), "t").is_err());
        assert!(Fixed(8, 8).validate(Span::none(), "t").is_ok());
    }
}
