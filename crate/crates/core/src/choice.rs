//! Boltzmann (softmax) choice with a rationality coefficient.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

/// Rationality coefficient β ≥ 0, or the perfectly rational limit.
///
/// Serialized as a number, or as the string `"infinity"` for [`Rationality::Perfect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rationality {
    Finite(f64),
    Perfect,
}

impl Rationality {
    pub fn finite(beta: f64) -> Self {
        assert!(beta >= 0.0 && beta.is_finite(), "rationality must be finite and non-negative");
        Rationality::Finite(beta)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Rationality::Finite(b) if *b == 0.0)
    }

    /// β divided by a load factor; the perfect limit stays perfect.
    pub fn scaled_down(&self, factor: f64) -> Self {
        match self {
            Rationality::Finite(b) => Rationality::Finite(b / factor),
            Rationality::Perfect => Rationality::Perfect,
        }
    }

    /// `p(i) ∝ exp(β·values[i])`. The perfect limit spreads mass evenly over
    /// the maximizers.
    pub fn probabilities<T: Scalar>(&self, values: &[T]) -> Vec<T> {
        let max = values.iter().copied().fold(T::neg_infinity(), T::max);
        match self {
            Rationality::Perfect => {
                let hits = values.iter().filter(|v| **v == max).count();
                let p = T::one() / T::lit(hits as f64);
                values
                    .iter()
                    .map(|v| if *v == max { p } else { T::zero() })
                    .collect()
            }
            Rationality::Finite(beta) => {
                let beta = T::lit(*beta);
                let weights: Vec<T> = values.iter().map(|v| (beta * (*v - max)).exp()).collect();
                let total: T = weights.iter().copied().sum();
                weights.into_iter().map(|w| w / total).collect()
            }
        }
    }

    /// Probability of picking the first of two options.
    pub fn first_of_two<T: Scalar>(&self, first: T, second: T) -> T {
        match self {
            Rationality::Perfect => {
                if first > second {
                    T::one()
                } else if first < second {
                    T::zero()
                } else {
                    T::lit(0.5)
                }
            }
            Rationality::Finite(beta) => {
                let z = T::lit(*beta) * (second - first);
                if z == T::zero() {
                    T::lit(0.5)
                } else {
                    T::one() / (T::one() + z.exp())
                }
            }
        }
    }
}

impl Serialize for Rationality {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Rationality::Finite(b) => serializer.serialize_f64(*b),
            Rationality::Perfect => serializer.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for Rationality {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RationalityVisitor;

        impl Visitor<'_> for RationalityVisitor {
            type Value = Rationality;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"infinity\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rationality, E> {
                if v >= 0.0 && v.is_finite() {
                    Ok(Rationality::Finite(v))
                } else {
                    Err(E::custom(format!("invalid rationality {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rationality, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rationality, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Rationality, E> {
                match v {
                    "infinity" | "inf" => Ok(Rationality::Perfect),
                    _ => Err(E::custom(format!("invalid rationality {v:?}"))),
                }
            }
        }

        deserializer.deserialize_any(RationalityVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_is_uniform() {
        let p = Rationality::finite(0.0).probabilities(&[1.0f64, 5.0, -3.0]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(Rationality::finite(0.0).first_of_two(3.0, -1.0), 0.5);
    }

    #[test]
    fn perfect_splits_ties() {
        let p = Rationality::Perfect.probabilities(&[2.0, 2.0, 1.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
        assert_eq!(Rationality::Perfect.first_of_two(1.0, 1.0), 0.5);
    }

    #[test]
    fn huge_beta_is_stable() {
        let r = Rationality::finite(1e6);
        assert_eq!(r.first_of_two(1.0, 0.5), 1.0);
        assert_eq!(r.first_of_two(0.5, 1.0), 0.0);
        let p = r.probabilities(&[0.0, 1.0]);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn serde_forms() {
        assert_eq!(serde_json::to_string(&Rationality::Perfect).unwrap(), "\"infinity\"");
        let r: Rationality = serde_json::from_str("2.5").unwrap();
        assert_eq!(r, Rationality::Finite(2.5));
        let r: Rationality = serde_json::from_str("3").unwrap();
        assert_eq!(r, Rationality::Finite(3.0));
        assert!(serde_json::from_str::<Rationality>("-1").is_err());
    }
}
