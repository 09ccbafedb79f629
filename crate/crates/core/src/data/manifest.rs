use super::ppm::{read_ppm, write_ppm};
use super::{BBox, Dataset, LandmarkSample, ProtocolSpec};
use crate::error::{Error, Result};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PROTOCOLS_FILE: &str = "protocols.json";

const FIXED_COLUMNS: [&str; 7] = ["file", "protocol", "domain", "bx", "by", "bw", "bh"];

pub fn read_protocols(path: &Path) -> Result<Vec<ProtocolSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let protocols: Vec<ProtocolSpec> = serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
    for p in &protocols {
        p.validate().map_err(|e| Error::load(path, e.to_string()))?;
    }
    Ok(protocols)
}

/// Loads a manifest and its images. The protocol list is read from
/// `protocols.json` beside the manifest; every row must use one protocol.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    if !manifest.is_file() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let protocols = read_protocols(&dir.join(PROTOCOLS_FILE))?;
    let bad = |line: u64, msg: String| Error::load(manifest, format!("line {line}: {msg}"));

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(manifest).map_err(|e| Error::load(manifest, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::load(manifest, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(Error::load(manifest, format!("header must start with {}", FIXED_COLUMNS.join(","))));
    }
    let coords = &cols[FIXED_COLUMNS.len()..];
    if coords.is_empty() || coords.len() % 2 != 0 {
        return Err(Error::load(manifest, "header needs x1,y1,...,xL,yL columns"));
    }
    for (i, pair) in coords.chunks(2).enumerate() {
        if pair[0] != format!("x{}", i + 1) || pair[1] != format!("y{}", i + 1) {
            return Err(Error::load(manifest, format!("expected columns x{0},y{0}, found {1},{2}", i + 1, pair[0], pair[1])));
        }
    }
    let l = coords.len() / 2;

    let mut protocol: Option<ProtocolSpec> = None;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::load(manifest, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let real = |i: usize| -> Result<f64> {
            let v: f64 = field(i).trim().parse().map_err(|_| bad(line, format!("bad number {:?} in column {}", field(i), cols[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(line, format!("non-finite value in column {}", cols[i])))
            }
        };
        let pid = field(1);
        let spec = match &protocol {
            Some(p) if p.id == pid => p,
            Some(p) => return Err(bad(line, format!("protocol {pid:?} differs from {:?}; one protocol per manifest", p.id))),
            None => {
                let p = protocols.iter().find(|p| p.id == pid).ok_or_else(|| bad(line, format!("protocol {pid:?} not in {PROTOCOLS_FILE}")))?;
                protocol.insert(p.clone())
            }
        };
        if spec.landmarks != l {
            return Err(bad(line, format!("protocol {pid} has {} landmarks, manifest has {l}", spec.landmarks)));
        }
        let domain = match field(2).trim() {
            "" => None,
            d => Some(d.parse().map_err(|_| bad(line, format!("bad domain label {d:?}")))?),
        };
        let bbox = BBox { x: real(3)?, y: real(4)?, w: real(5)?, h: real(6)? };
        bbox.validate().map_err(|e| bad(line, e.to_string()))?;
        let landmarks = (0..l).map(|k| Ok([real(7 + 2 * k)?, real(8 + 2 * k)?])).collect::<Result<Vec<_>>>()?;
        let file = field(0).to_string();
        let image = read_ppm(&dir.join(&file))?;
        samples.push(LandmarkSample { image, landmarks, bbox, domain, protocol: pid.to_string(), file });
    }
    let protocol = protocol.ok_or_else(|| Error::EmptyDataset(manifest.display().to_string()))?;
    Ok(Dataset { protocol, samples })
}

/// Writes images, `manifest.csv` and `protocols.json` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dir.display().to_string()));
    }
    std::fs::create_dir_all(dir)?;
    let l = dataset.protocol.landmarks;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE)).map_err(csv_io)?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 1..=l {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    w.write_record(&header).map_err(csv_io)?;
    for s in &dataset.samples {
        if s.landmarks.len() != l {
            return Err(Error::dim(format!("sample {} has {} landmarks, protocol has {l}", s.file, s.landmarks.len())));
        }
        write_ppm(&dir.join(&s.file), &s.image)?;
        let mut row = vec![
            s.file.clone(),
            dataset.protocol.id.clone(),
            s.domain.map(|d| d.to_string()).unwrap_or_default(),
            s.bbox.x.to_string(),
            s.bbox.y.to_string(),
            s.bbox.w.to_string(),
            s.bbox.h.to_string(),
        ];
        for p in &s.landmarks {
            row.push(p[0].to_string());
            row.push(p[1].to_string());
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    let protocols = serde_json::to_string_pretty(&[&dataset.protocol])?;
    std::fs::write(dir.join(PROTOCOLS_FILE), protocols + "\n")?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("{other:?}")),
    }
}
