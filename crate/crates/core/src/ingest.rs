//! Gridded observations, the annual covariate, weekly thinning and the
//! orthonormal covariate design.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const WEEKS_PER_YEAR: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    CsvLong,
    Binary,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv-long" | "csv" => Ok(DatasetFormat::CsvLong),
            "binary-matrix" | "binary" => Ok(DatasetFormat::Binary),
            other => Err(Error::Argument(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// N sites observed at T = T1·T2 weekly time points.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDataset {
    /// N×T, row n is site n.
    values: DMatrix<f64>,
    /// (longitude °E, latitude °N) per site.
    coords: Vec<(f64, f64)>,
    weeks_per_year: usize,
}

impl GriddedDataset {
    pub fn new(values: DMatrix<f64>, coords: Vec<(f64, f64)>, weeks_per_year: usize) -> Result<Self> {
        let (n, t) = values.shape();
        if n == 0 || t == 0 {
            return Err(Error::Shape("dataset must have at least one site and one week".into()));
        }
        if weeks_per_year == 0 || t % weeks_per_year != 0 {
            return Err(Error::Shape(format!(
                "{t} weeks is not a whole number of {weeks_per_year}-week years"
            )));
        }
        if coords.len() != n {
            return Err(Error::Shape(format!("{} coordinates for {n} sites", coords.len())));
        }
        if let Some(i) = coords.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Argument(format!("site {i} has non-finite coordinates")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            coords[a].0.total_cmp(&coords[b].0).then(coords[a].1.total_cmp(&coords[b].1))
        });
        for w in order.windows(2) {
            if coords[w[0]] == coords[w[1]] {
                return Err(Error::Argument(format!(
                    "sites {} and {} share coordinates {:?}",
                    w[0], w[1], coords[w[0]]
                )));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value at site {}, week {}",
                pos % n,
                pos / n + 1
            )));
        }
        Ok(GriddedDataset {
            values,
            coords,
            weeks_per_year,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_weeks(&self) -> usize {
        self.values.ncols()
    }

    pub fn years(&self) -> usize {
        self.n_weeks() / self.weeks_per_year
    }

    pub fn weeks_per_year(&self) -> usize {
        self.weeks_per_year
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Observation vector at 1-based time `t`.
    pub fn week(&self, t: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(t - 1)
    }

    /// Restrict to the 1-based inclusive week range `[first, last]`.
    pub fn weeks(&self, first: usize, last: usize) -> Result<Self> {
        if first < 1 || last > self.n_weeks() || first > last {
            return Err(Error::Argument(format!("week range {first}..={last} out of bounds")));
        }
        let cols = self.values.columns(first - 1, last - first + 1).into_owned();
        GriddedDataset::new(cols, self.coords.clone(), self.weeks_per_year)
    }
}

/// Mean Earth radius used for great-circle distances, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two `(lon, lat)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// 1-based `t` to (year `t1`, week `t2`).
pub fn time_to_year_week(t: usize, weeks_per_year: usize) -> (usize, usize) {
    let t1 = t.div_ceil(weeks_per_year);
    (t1, t - weeks_per_year * (t1 - 1))
}

pub fn year_week_to_time(t1: usize, t2: usize, weeks_per_year: usize) -> usize {
    weeks_per_year * (t1 - 1) + t2
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<GriddedDataset> {
    load_dataset_with_period(path, format, WEEKS_PER_YEAR)
}

/// As [`load_dataset`] with a non-standard year length (used by toy setups).
pub fn load_dataset_with_period(
    path: &Path,
    format: DatasetFormat,
    weeks_per_year: usize,
) -> Result<GriddedDataset> {
    match format {
        DatasetFormat::CsvLong => load_csv_long(path, weeks_per_year),
        DatasetFormat::Binary => load_binary(path, weeks_per_year),
    }
}

fn load_csv_long(path: &Path, weeks_per_year: usize) -> Result<GriddedDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| parse_err(format!("{}:1", path.display()), e.to_string()))?
        .clone();
    let expected = ["site_id", "lon", "lat", "t", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            format!("{}:1", path.display()),
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut site_index: std::collections::HashMap<String, usize> = Default::default();
    let mut coords: Vec<(f64, f64)> = Vec::new();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let loc = || format!("{} row {row}", path.display());
        let record = record.map_err(|e| parse_err(loc(), e.to_string()))?;
        if record.len() != 5 {
            return Err(parse_err(loc(), format!("expected 5 fields, found {}", record.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .map_err(|_| parse_err(loc(), format!("{name} '{}' is not a number", &record[k])))
        };
        let lon = num(1, "lon")?;
        let lat = num(2, "lat")?;
        let t: usize = record[3]
            .parse()
            .map_err(|_| parse_err(loc(), format!("t '{}' is not a positive integer", &record[3])))?;
        if t == 0 {
            return Err(parse_err(loc(), "t is 1-based"));
        }
        let value = num(4, "value")?;
        if !value.is_finite() {
            return Err(parse_err(loc(), "missing or non-finite value"));
        }
        let next = site_index.len();
        let site = *site_index.entry(record[0].to_string()).or_insert(next);
        if site == coords.len() {
            coords.push((lon, lat));
        } else if coords[site] != (lon, lat) {
            return Err(parse_err(loc(), format!("site '{}' changes coordinates", &record[0])));
        }
        cells.push((site, t, value));
    }
    let n = coords.len();
    if n == 0 {
        return Err(parse_err(path.display().to_string(), "no data rows"));
    }
    let t_max = cells.iter().map(|c| c.1).max().unwrap_or(0);
    if cells.len() != n * t_max {
        return Err(Error::Shape(format!(
            "{} rows for {n} sites and {t_max} weeks; every site needs every week",
            cells.len()
        )));
    }
    let mut values = DMatrix::from_element(n, t_max, f64::NAN);
    let mut seen = vec![false; n * t_max];
    for (row, (site, t, v)) in cells.into_iter().enumerate() {
        let key = site * t_max + t - 1;
        if seen[key] {
            return Err(parse_err(
                format!("{} row {}", path.display(), row + 2),
                format!("duplicate entry for site {site}, week {t}"),
            ));
        }
        seen[key] = true;
        values[(site, t - 1)] = v;
    }
    GriddedDataset::new(values, coords, weeks_per_year)
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, path)?))
}

/// Binary layout: `N`, `T` as u64, then N (lon, lat) pairs, then the N×T
/// values site by site; all little-endian.
fn load_binary(path: &Path, weeks_per_year: usize) -> Result<GriddedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(parse_err(path.display().to_string(), "truncated header"));
    }
    let mut r = bytes.as_slice();
    let n = read_u64(&mut r, path)? as usize;
    let t = read_u64(&mut r, path)? as usize;
    let expected = n
        .checked_mul(t)
        .and_then(|nt| nt.checked_add(2 * n))
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(parse_err(
            path.display().to_string(),
            format!("size {} does not match header N={n}, T={t}", bytes.len()),
        ));
    }
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push((read_f64(&mut r, path)?, read_f64(&mut r, path)?));
    }
    let mut values = DMatrix::zeros(n, t);
    for i in 0..n {
        for j in 0..t {
            values[(i, j)] = read_f64(&mut r, path)?;
        }
    }
    GriddedDataset::new(values, coords, weeks_per_year)
}

pub fn write_dataset(data: &GriddedDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        DatasetFormat::CsvLong => {
            writeln!(w, "site_id,lon,lat,t,value").map_err(io)?;
            for n in 0..data.n_sites() {
                let (lon, lat) = data.coords[n];
                for t in 0..data.n_weeks() {
                    writeln!(w, "{},{lon},{lat},{},{}", n + 1, t + 1, data.values[(n, t)]).map_err(io)?;
                }
            }
        }
        DatasetFormat::Binary => {
            w.write_all(&(data.n_sites() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(data.n_weeks() as u64).to_le_bytes()).map_err(io)?;
            for (lon, lat) in &data.coords {
                w.write_all(&lon.to_le_bytes()).map_err(io)?;
                w.write_all(&lat.to_le_bytes()).map_err(io)?;
            }
            for n in 0..data.n_sites() {
                for t in 0..data.n_weeks() {
                    w.write_all(&data.values[(n, t)].to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

/// Keep one day per week: output column t is daily column 7(t−1)+weekday.
/// Trailing days that do not complete a week are dropped.
pub fn thin_weekly(daily: &DMatrix<f64>, weekday: usize) -> Result<DMatrix<f64>> {
    if !(1..=7).contains(&weekday) {
        return Err(Error::Argument(format!("weekday {weekday} outside 1..=7")));
    }
    if daily.ncols() < 7 {
        return Err(Error::Argument(format!("{} days is less than one week", daily.ncols())));
    }
    let weeks = daily.ncols() / 7;
    Ok(DMatrix::from_fn(daily.nrows(), weeks, |n, t| daily[(n, 7 * t + weekday - 1)]))
}

/// Annual covariate values indexed by consecutive calendar years.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSeries {
    years: Vec<i64>,
    values: Vec<f64>,
}

impl CovariateSeries {
    pub fn new(years: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if years.len() != values.len() || years.is_empty() {
            return Err(Error::Shape("covariate years and values must be non-empty and aligned".into()));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Argument("covariate years must be consecutive".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("covariate value for year {} is not finite", years[i])));
        }
        Ok(CovariateSeries { years, values })
    }

    /// Series labelled 1, 2, … for in-memory use.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let years = (1..=values.len() as i64).collect();
        CovariateSeries::new(years, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based year index of a calendar year label.
    pub fn index_of_year(&self, year: i64) -> Result<usize> {
        let first = self.years[0];
        if year < first || year >= first + self.len() as i64 {
            return Err(Error::Coverage {
                requested: (year - first + 1).max(0) as usize,
                available: self.len(),
            });
        }
        Ok((year - first) as usize + 1)
    }
}

pub fn load_covariate(path: &Path) -> Result<CovariateSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| parse_err(format!("{}:1", path.display()), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["year", "value"] {
        return Err(parse_err(format!("{}:1", path.display()), "expected header year,value"));
    }
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let loc = format!("{} row {}", path.display(), i + 2);
        let record = record.map_err(|e| parse_err(&loc, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(&loc, "expected 2 fields"));
        }
        years.push(record[0].parse::<i64>().map_err(|_| parse_err(&loc, "year is not an integer"))?);
        values.push(record[1].parse::<f64>().map_err(|_| parse_err(&loc, "value is not a number"))?);
    }
    CovariateSeries::new(years, values)
}

pub fn write_covariate(cov: &CovariateSeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "year,value").map_err(io)?;
    for (y, v) in cov.years.iter().zip(&cov.values) {
        writeln!(w, "{y},{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Standardisation fixed on the first `T1` (historic) years and applied to
/// any covered year, including projection years past the fit window.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDesign {
    fit_years: usize,
    mean: f64,
    scale: f64,
    values: Vec<f64>,
}

impl CovariateDesign {
    pub fn new(cov: &CovariateSeries, fit_years: usize) -> Result<Self> {
        if fit_years == 0 || fit_years > cov.len() {
            return Err(Error::Coverage {
                requested: fit_years,
                available: cov.len(),
            });
        }
        let hist = &cov.values[..fit_years];
        let mean = hist.iter().sum::<f64>() / fit_years as f64;
        let ss: f64 = hist.iter().map(|x| (x - mean) * (x - mean)).sum();
        let scale = ss.sqrt();
        if !(scale > 0.0) || hist.iter().all(|x| *x == hist[0]) {
            return Err(Error::Degenerate("covariate is constant over the fit window".into()));
        }
        Ok(CovariateDesign {
            fit_years,
            mean,
            scale,
            values: cov.values.clone(),
        })
    }

    pub fn fit_years(&self) -> usize {
        self.fit_years
    }

    pub fn coverage(&self) -> usize {
        self.values.len()
    }

    /// Row `(T1^{-1/2}, standardised x*)` for 1-based year index `t1`.
    pub fn row(&self, t1: usize) -> Result<[f64; 2]> {
        if t1 == 0 || t1 > self.values.len() {
            return Err(Error::Coverage {
                requested: t1,
                available: self.values.len(),
            });
        }
        Ok([self.intercept(), self.standardize(self.values[t1 - 1])])
    }

    pub fn intercept(&self) -> f64 {
        1.0 / (self.fit_years as f64).sqrt()
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    /// Average standardised covariate over 1-based year indices `[from, from + len)`.
    pub fn window_mean(&self, from: usize, len: usize) -> Result<f64> {
        if from == 0 || len == 0 || from + len - 1 > self.values.len() {
            return Err(Error::Coverage {
                requested: from + len.max(1) - 1,
                available: self.values.len(),
            });
        }
        let raw = self.values[from - 1..from - 1 + len].iter().sum::<f64>() / len as f64;
        Ok(self.standardize(raw))
    }

    /// The `T1×2` orthonormal design over the fit window.
    pub fn x0(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.fit_years, 2, |r, c| {
            if c == 0 {
                self.intercept()
            } else {
                self.standardize(self.values[r])
            }
        })
    }
}

pub fn standardize_covariate(cov: &CovariateSeries, fit_years: usize) -> Result<DMatrix<f64>> {
    Ok(CovariateDesign::new(cov, fit_years)?.x0())
}
