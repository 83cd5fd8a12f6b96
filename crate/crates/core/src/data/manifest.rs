//! Dataset manifests: CSV with header `path,label,patient_id,split`.
//!
//! An optional first line `# classes: A,B,...` declares the class order;
//! otherwise [`DEFAULT_CLASSES`] is used. Relative image paths resolve
//! against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLASSES: [&str; 5] = ["Aorta", "Flows", "Other", "VSign", "XSign"];

const CLASSES_PREFIX: &str = "# classes:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "" | "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    /// As written in the manifest.
    pub path: String,
    pub label: String,
    pub patient_id: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub records: Vec<Record>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(classes: Vec<String>, records: Vec<Record>, base_dir: PathBuf) -> Result<Self> {
        let m = Self {
            classes,
            records,
            base_dir,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn default_classes() -> Vec<String> {
        DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    /// Checks labels against the class set and patient exclusivity.
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::validation("a manifest needs at least two classes"));
        }
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            self.class_index(&r.label)?;
            if r.patient_id.is_empty() {
                return Err(Error::validation(format!("{} has no patient_id", r.path)));
            }
            match seen.insert(&r.patient_id, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::validation(format!(
                        "patient {} appears in both {prev} and {}",
                        r.patient_id, r.split
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::validation(format!("label {label:?} not in class set {:?}", self.classes)))
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Csv(e) => Error::Ingest {
                path: path.to_path_buf(),
                reason: e.to_string(),
            },
            Error::Validation(reason) => Error::Ingest {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let classes = match text.lines().next().and_then(|l| l.strip_prefix(CLASSES_PREFIX)) {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => Self::default_classes(),
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "patient_id", "split"] {
            return Err(Error::validation(format!(
                "manifest header must be path,label,patient_id,split, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            records.push(Record {
                path: row[0].to_string(),
                label: row[1].to_string(),
                patient_id: row[2].to_string(),
                split: row[3].parse()?,
            });
        }
        Self::new(classes, records, base_dir)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "label", "patient_id", "split"])?;
        for r in &self.records {
            w.write_record([r.path.as_str(), &r.label, &r.patient_id, r.split.as_str()])?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::validation(e.to_string()))?)
            .expect("csv output is utf-8");
        Ok(format!("{CLASSES_PREFIX} {}\n{body}", self.classes.join(",")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}
