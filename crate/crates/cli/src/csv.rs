//! Minimal CSV table writer with a versioned comment header.

use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "brwlab-csv v1";

/// Hex SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// 17 significant digits; infinities and NaN spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct Table {
    out: String,
    width: usize,
}

impl Table {
    pub fn new(command: &str, hash: &str, seed: Option<u64>, columns: &[&str]) -> Self {
        let seed = seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        let mut out = format!("# {SCHEMA} command={command} config_hash={hash} seed={seed}\n");
        out.push_str(&columns.join(","));
        out.push('\n');
        Self { out, width: columns.len() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.width, "row width mismatch");
        self.out.push_str(&cells.join(","));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_has_17_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new("x", "h", Some(3), &["a", "b"]);
        t.row(vec!["1".into(), "2".into()]);
        assert_eq!(t.finish(), "# brwlab-csv v1 command=x config_hash=h seed=3\na,b\n1,2\n");
    }
}
