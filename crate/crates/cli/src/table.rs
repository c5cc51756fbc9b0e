use std::fmt::Write as _;

/// One CSV/SVG artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Figure or table identifier, the second half of `<experiment>_<figure>`.
    pub figure: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Num(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Num(v.unwrap_or(f64::NAN))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_sig(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Formats `x` with 12 significant digits, switching to exponent notation
/// outside `[1e-5, 1e12)`, with trailing zeros removed.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl Table {
    pub fn new(figure: impl Into<String>, title: impl Into<String>, columns: Vec<String>) -> Self {
        Self { figure: figure.into(), title: title.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn is_time_series(&self) -> bool {
        self.columns.first().is_some_and(|c| c == "t")
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<_> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(-2.5), "-2.5");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig(123456.789012345), "123456.789012");
        assert_eq!(format_sig(1.23456789012345e-7), "1.23456789012e-7");
        assert_eq!(format_sig(4.2e15), "4.2e15");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(f64::INFINITY), "inf");
        assert_eq!(format_sig(f64::NAN), "nan");
        assert_eq!(format_sig(9.9999999999999e-6), "0.00001");
        assert_eq!(format_sig(9.9999999999999e-7), "1e-6");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("fig0", "demo", vec!["t".into(), "x".into(), "label".into()]);
        t.push(vec![0usize.into(), 0.5.into(), "a".into()]);
        t.push(vec![1usize.into(), None.into(), "b".into()]);
        assert_eq!(t.to_csv(), "t,x,label\n0,0.5,a\n1,nan,b\n");
        assert_eq!(t.column("x").unwrap()[0], 0.5);
    }
}
