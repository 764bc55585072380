use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Non-negative rational number, kept in lowest terms.
///
/// Parses `"2"`, `"0.2"`, `"1/3"` and `"20%"`. Count arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u64) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(self * m)` with halves rounded up.
    pub fn of_half_up(&self, m: u64) -> u64 {
        let (n, d, m) = (self.num as u128, self.den as u128, m as u128);
        ((2 * n * m + d) / (2 * d)) as u64
    }

    /// `floor(self * m)`.
    pub fn of_floor(&self, m: u64) -> u64 {
        (self.num as u128 * m as u128 / self.den as u128) as u64
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid ratio `{s}`");
        let t = s.trim();
        if let Some(p) = t.strip_suffix('%') {
            let r: Ratio = p.trim().parse().map_err(|_| bad())?;
            return Ratio::new(r.num, r.den.checked_mul(100).ok_or_else(bad)?).ok_or_else(bad);
        }
        if let Some((a, b)) = t.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            return Ratio::new(a, b).ok_or_else(bad);
        }
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let digits = format!("{int}{frac}");
        let num: u64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        Ratio::new(num, den).ok_or_else(bad)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            return write!(f, "{}", self.num);
        }
        // Terminating decimals print as decimals, everything else as a fraction.
        let mut d = self.den;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d.is_multiple_of(2) {
            d /= 2;
            twos += 1;
        }
        while d.is_multiple_of(5) {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return write!(f, "{}/{}", self.num, self.den);
        }
        let places = twos.max(fives);
        let scale = 10u128.pow(places);
        let scaled = self.num as u128 * scale / self.den as u128;
        let int = scaled / scale;
        let frac = scaled % scale;
        write!(f, "{int}.{frac:0width$}", width = places as usize)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(u64),
            Float(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Int(n) => n.to_string(),
            Raw::Float(x) => x.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> Ratio {
        s.parse().unwrap()
    }

    #[test]
    fn parses_forms() {
        assert_eq!(r("0.2"), Ratio::new(1, 5).unwrap());
        assert_eq!(r("20%"), Ratio::new(1, 5).unwrap());
        assert_eq!(r("1/3"), Ratio::new(1, 3).unwrap());
        assert_eq!(r("5"), Ratio::integer(5));
        assert_eq!(r(".5"), Ratio::new(1, 2).unwrap());
        for bad in ["", "-1", "1/0", "abc", "1.2.3", "."] {
            assert!(bad.parse::<Ratio>().is_err(), "{bad}");
        }
    }

    #[test]
    fn displays_canonically() {
        assert_eq!(r("0.20").to_string(), "0.2");
        assert_eq!(r("2/6").to_string(), "1/3");
        assert_eq!(r("3").to_string(), "3");
        assert_eq!(r("0.125").to_string(), "0.125");
        assert_eq!(r("1.05").to_string(), "1.05");
    }

    #[test]
    fn half_up_counts() {
        assert_eq!(r("0.2").of_half_up(500), 100);
        assert_eq!(r("0.2").of_half_up(5), 1);
        assert_eq!(r("0.5").of_half_up(5), 3);
        assert_eq!(r("0.1").of_half_up(25), 3);
        assert_eq!(r("0.7").of_half_up(5), 4);
        assert_eq!(r("0").of_half_up(50), 0);
    }

    #[test]
    fn serde_accepts_numbers_and_strings() {
        let a: Ratio = serde_json::from_str("0.2").unwrap();
        let b: Ratio = serde_json::from_str("\"1/5\"").unwrap();
        let c: Ratio = serde_json::from_str("2").unwrap();
        assert_eq!(a, b);
        assert_eq!(c, Ratio::integer(2));
        assert_eq!(serde_json::to_string(&a).unwrap(), "\"0.2\"");
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(n in 0u64..100_000, d in 1u64..10_000) {
            let x = Ratio::new(n, d).unwrap();
            prop_assert_eq!(x.to_string().parse::<Ratio>().unwrap(), x);
        }

        #[test]
        fn half_up_matches_exact_rounding(n in 0u64..1000, d in 1u64..1000, m in 0u64..5000) {
            let x = Ratio::new(n, d).unwrap();
            // round-half-up of n*m/d: smallest k with 2k+1 > 2nm/d, done in integers
            let exact_twice = 2 * n * m;
            let k = x.of_half_up(m);
            prop_assert!(2 * k * d <= exact_twice + d);
            prop_assert!(exact_twice + d < 2 * (k + 1) * d);
        }
    }
}
