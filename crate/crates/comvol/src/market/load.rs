//! CSV ingestion of a market directory.
//!
//! Expected files, all UTF-8 CSV with a header row and `#` comment lines:
//!
//! * `futures.csv`   — `T,price`
//! * `discount.csv`  — `T,df`
//! * `quotes.csv`    — `expiry,contract,strike_or_delta,strike_type,vol,style`
//! * `calendars.csv` — `id,first_trade,last_trade,first_notice,last_notice,`
//!   `first_delivery,last_delivery,option_expiry[,option_payment]`, ISO-8601
//!   dates, and a `# valuation_date=YYYY-MM-DD` comment line.
//!
//! `strike_type` is `strike` or `delta`; `style` is `future` or `equity`.
//! A `# day_count=...` comment, when present, must spell ACT/365F.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

use super::{
    delta_to_strike, ContractCalendar, DiscountCurve, FuturesCurve, MarketData, MarginStyle,
    StrikeSpec, VolQuote, VolQuoteSet, DAY_COUNT,
};

/// Ingestion switches.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Reject discount curves with increasing factors (negative-rate data
    /// can switch this off).
    pub enforce_discount_monotone: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { enforce_discount_monotone: true }
    }
}

/// Load and validate a market directory.
pub fn load_market(dir: &Path, options: &LoadOptions) -> Result<MarketData> {
    let futures_file = read_with_meta(&dir.join("futures.csv"))?;
    let discount_file = read_with_meta(&dir.join("discount.csv"))?;
    let quotes_file = read_with_meta(&dir.join("quotes.csv"))?;
    let calendars_file = read_with_meta(&dir.join("calendars.csv"))?;

    for file in [&futures_file, &discount_file, &quotes_file, &calendars_file] {
        if let Some(dc) = file.meta.get("day_count") {
            if dc != DAY_COUNT {
                return Err(Error::invalid(
                    &file.name,
                    format!("unsupported day count '{dc}', only {DAY_COUNT} is supported"),
                ));
            }
        }
    }

    let valuation_date: NaiveDate = calendars_file
        .meta
        .get("valuation_date")
        .ok_or_else(|| Error::parse("calendars.csv", "missing '# valuation_date=YYYY-MM-DD' header"))?
        .parse()
        .map_err(|e| Error::parse("calendars.csv", format!("bad valuation_date: {e}")))?;

    let curve = parse_futures(&futures_file)?;
    let discount = parse_discount(&discount_file, options.enforce_discount_monotone)?;
    let calendars = parse_calendars(&calendars_file)?;
    let quotes = parse_quotes(&quotes_file, &curve, &calendars, valuation_date)?;

    Ok(MarketData { valuation_date, curve, discount, quotes, calendars })
}

struct FileContent {
    name: String,
    meta: BTreeMap<String, String>,
    body: String,
}

fn read_with_meta(path: &Path) -> Result<FileContent> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::parse(&name, format!("cannot read {}: {e}", path.display())))?;
    let mut meta = BTreeMap::new();
    for line in body.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    Ok(FileContent { name, meta, body })
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, file: &str, row: usize, name: &str) -> Result<&'a str> {
    rec.get(idx)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::parse(format!("{file} row {row}"), format!("missing field '{name}'")))
}

fn parse_f64(s: &str, file: &str, row: usize, name: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(format!("{file} row {row}"), format!("field '{name}': not a number: '{s}'")))
}

fn parse_date(s: &str, file: &str, row: usize, name: &str) -> Result<NaiveDate> {
    s.parse::<NaiveDate>()
        .map_err(|_| Error::parse(format!("{file} row {row}"), format!("field '{name}': not an ISO date: '{s}'")))
}

fn parse_futures(file: &FileContent) -> Result<FuturesCurve> {
    let mut pillars = Vec::new();
    for (i, rec) in reader(&file.body).records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(format!("{} row {row}", file.name), e.to_string()))?;
        let t = parse_f64(field(&rec, 0, &file.name, row, "T")?, &file.name, row, "T")?;
        let p = parse_f64(field(&rec, 1, &file.name, row, "price")?, &file.name, row, "price")?;
        pillars.push((t, p));
    }
    FuturesCurve::new(pillars)
}

fn parse_discount(file: &FileContent, enforce_monotone: bool) -> Result<DiscountCurve> {
    let mut pillars = Vec::new();
    for (i, rec) in reader(&file.body).records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(format!("{} row {row}", file.name), e.to_string()))?;
        let t = parse_f64(field(&rec, 0, &file.name, row, "T")?, &file.name, row, "T")?;
        let df = parse_f64(field(&rec, 1, &file.name, row, "df")?, &file.name, row, "df")?;
        pillars.push((t, df));
    }
    DiscountCurve::new(pillars, enforce_monotone)
}

fn parse_calendars(file: &FileContent) -> Result<BTreeMap<String, ContractCalendar>> {
    let mut out = BTreeMap::new();
    for (i, rec) in reader(&file.body).records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(format!("{} row {row}", file.name), e.to_string()))?;
        let id = field(&rec, 0, &file.name, row, "id")?.to_string();
        let cal = ContractCalendar {
            id: id.clone(),
            first_trade: parse_date(field(&rec, 1, &file.name, row, "first_trade")?, &file.name, row, "first_trade")?,
            last_trade: parse_date(field(&rec, 2, &file.name, row, "last_trade")?, &file.name, row, "last_trade")?,
            first_notice: parse_date(field(&rec, 3, &file.name, row, "first_notice")?, &file.name, row, "first_notice")?,
            last_notice: parse_date(field(&rec, 4, &file.name, row, "last_notice")?, &file.name, row, "last_notice")?,
            first_delivery: parse_date(field(&rec, 5, &file.name, row, "first_delivery")?, &file.name, row, "first_delivery")?,
            last_delivery: parse_date(field(&rec, 6, &file.name, row, "last_delivery")?, &file.name, row, "last_delivery")?,
            option_expiry: parse_date(field(&rec, 7, &file.name, row, "option_expiry")?, &file.name, row, "option_expiry")?,
            option_payment: match rec.get(8).filter(|s| !s.is_empty()) {
                Some(s) => Some(parse_date(s, &file.name, row, "option_payment")?),
                None => None,
            },
        };
        cal.validate()?;
        if out.insert(id.clone(), cal).is_some() {
            return Err(Error::parse(
                format!("{} row {row}", file.name),
                format!("duplicate contract id '{id}'"),
            ));
        }
    }
    Ok(out)
}

fn parse_quotes(
    file: &FileContent,
    curve: &FuturesCurve,
    calendars: &BTreeMap<String, ContractCalendar>,
    valuation_date: NaiveDate,
) -> Result<VolQuoteSet> {
    let mut quotes: Vec<VolQuote> = Vec::new();
    for (i, rec) in reader(&file.body).records().enumerate() {
        let row = i + 2;
        let ctx = format!("{} row {row}", file.name);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let expiry = parse_f64(field(&rec, 0, &file.name, row, "expiry")?, &file.name, row, "expiry")?;
        let contract = field(&rec, 1, &file.name, row, "contract")?.to_string();
        let raw = parse_f64(
            field(&rec, 2, &file.name, row, "strike_or_delta")?,
            &file.name,
            row,
            "strike_or_delta",
        )?;
        let strike_type = field(&rec, 3, &file.name, row, "strike_type")?.to_ascii_lowercase();
        let vol = parse_f64(field(&rec, 4, &file.name, row, "vol")?, &file.name, row, "vol")?;
        let style: MarginStyle = field(&rec, 5, &file.name, row, "style")?.parse()?;

        if !(vol > 0.0) {
            return Err(Error::invalid(&ctx, format!("implied vol must be positive, got {vol}")));
        }
        if !(expiry > 0.0) {
            return Err(Error::invalid(&ctx, format!("expiry must be positive, got {expiry}")));
        }
        let cal = calendars
            .get(&contract)
            .ok_or_else(|| Error::invalid(&ctx, format!("quote references unknown contract '{contract}'")))?;
        let t_last = super::year_fraction(valuation_date, cal.t_last());
        if expiry > t_last + 1e-9 {
            return Err(Error::invalid(
                &ctx,
                format!("expiry {expiry} is after contract {contract} T^last {t_last:.6}"),
            ));
        }
        let f0 = curve.price(t_last).map_err(|e| Error::invalid(&ctx, e.to_string()))?;

        let (strike_spec, strike) = match strike_type.as_str() {
            "strike" => {
                if !(raw > 0.0) {
                    return Err(Error::invalid(&ctx, format!("strike must be positive, got {raw}")));
                }
                (StrikeSpec::Absolute(raw), raw)
            }
            "delta" => {
                let k = delta_to_strike(raw, expiry, f0, vol).map_err(|e| Error::invalid(&ctx, e.to_string()))?;
                (StrikeSpec::Delta(raw), k)
            }
            other => {
                return Err(Error::parse(&ctx, format!("strike_type must be 'strike' or 'delta', got '{other}'")));
            }
        };

        if quotes.iter().any(|q| {
            q.contract == contract
                && (q.expiry - expiry).abs() < 1e-12
                && (q.strike - strike).abs() < 1e-9 * strike.max(1.0)
        }) {
            return Err(Error::invalid(
                &ctx,
                format!("duplicate quote for contract {contract}, expiry {expiry}, strike {strike}"),
            ));
        }

        quotes.push(VolQuote { expiry, contract, strike_spec, strike, vol, style });
    }
    Ok(VolQuoteSet { quotes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, content: &str) {
        let mut f = std::fs::File::create(dir.join(name)).unwrap();
        f.write_all(content.as_bytes()).unwrap();
    }

    fn basic_market(dir: &Path) {
        write(dir, "futures.csv", "T,price\n0.05,100\n0.5,101\n");
        write(dir, "discount.csv", "T,df\n0.5,0.99\n1.0,0.97\n");
        write(
            dir,
            "calendars.csv",
            "# valuation_date=2018-01-02\n# day_count=ACT/365F\n\
             id,first_trade,last_trade,first_notice,last_notice,first_delivery,last_delivery,option_expiry\n\
             CL1,2015-04-01,2018-03-19,2018-02-20,2018-03-20,2018-03-01,2018-03-29,2018-02-09\n",
        );
        write(
            dir,
            "quotes.csv",
            "expiry,contract,strike_or_delta,strike_type,vol,style\n\
             0.1,CL1,100,strike,0.25,future\n\
             0.1,CL1,0.25,delta,0.28,equity\n",
        );
    }

    #[test]
    fn loads_valid_market() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        let mkt = load_market(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(mkt.curve.pillars().len(), 2);
        assert_eq!(mkt.quotes.quotes.len(), 2);
        assert_eq!(mkt.calendars.len(), 1);
        // delta quote resolved to an absolute OTM strike
        let q = &mkt.quotes.quotes[1];
        assert!(matches!(q.strike_spec, StrikeSpec::Delta(_)));
        assert!(q.strike > 100.0);
    }

    #[test]
    fn rejects_negative_vol_with_row() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        write(
            dir.path(),
            "quotes.csv",
            "expiry,contract,strike_or_delta,strike_type,vol,style\n0.1,CL1,100,strike,-0.1,future\n",
        );
        let err = load_market(dir.path(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn rejects_unknown_contract() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        write(
            dir.path(),
            "quotes.csv",
            "expiry,contract,strike_or_delta,strike_type,vol,style\n0.1,ZZ9,100,strike,0.2,future\n",
        );
        let err = load_market(dir.path(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unknown contract"), "{err}");
    }

    #[test]
    fn rejects_date_order_violation() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        // option expiry after first notice
        write(
            dir.path(),
            "calendars.csv",
            "# valuation_date=2018-01-02\n\
             id,first_trade,last_trade,first_notice,last_notice,first_delivery,last_delivery,option_expiry\n\
             CL1,2015-04-01,2018-03-19,2018-02-20,2018-03-20,2018-03-01,2018-03-29,2018-02-21\n",
        );
        assert!(load_market(dir.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn rejects_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        std::fs::remove_file(dir.path().join("quotes.csv")).unwrap();
        assert!(load_market(dir.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn rejects_duplicate_quote() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        write(
            dir.path(),
            "quotes.csv",
            "expiry,contract,strike_or_delta,strike_type,vol,style\n\
             0.1,CL1,100,strike,0.25,future\n\
             0.1,CL1,100,strike,0.26,future\n",
        );
        let err = load_market(dir.path(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn requires_valuation_date() {
        let dir = tempfile::tempdir().unwrap();
        basic_market(dir.path());
        write(
            dir.path(),
            "calendars.csv",
            "id,first_trade,last_trade,first_notice,last_notice,first_delivery,last_delivery,option_expiry\n\
             CL1,2015-04-01,2018-03-19,2018-02-20,2018-03-20,2018-03-01,2018-03-29,2018-02-09\n",
        );
        let err = load_market(dir.path(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("valuation_date"), "{err}");
    }
}
