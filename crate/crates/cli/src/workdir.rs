//! Layout of a preprocessed data directory and the datasets built from it.
//!
//! ```text
//! maps/<stem>.uvf             input position maps
//! aligned/<stem>.obj          aligned, normalized input meshes
//! targets/<stem>.uvf          paired target maps (translation data only)
//! aligned_targets/<stem>.obj  paired target meshes
//! layout.uvl                  template UV layout with cached raster
//! scale.txt                   normalization record
//! labels.csv                  subjects and labels, when supplied
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use facegan::geometry::{Mesh, UvLayout, UvMap};
use facegan::io::{load_layout, load_uvmap, LabelTable, ScaleRecord};
use facegan::training::{split_indices, PairedDataset};
use facegan::{Error, Result};

pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: &Path) -> Self {
        WorkDir { root: root.to_path_buf() }
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn targets(&self) -> PathBuf {
        self.root.join("targets")
    }

    pub fn aligned(&self) -> PathBuf {
        self.root.join("aligned")
    }

    pub fn aligned_targets(&self) -> PathBuf {
        self.root.join("aligned_targets")
    }

    pub fn layout(&self) -> PathBuf {
        self.root.join("layout.uvl")
    }

    pub fn scale(&self) -> PathBuf {
        self.root.join("scale.txt")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.csv")
    }
}

/// Sorted file stems with the given extension; a missing directory is an error naming it.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: format!("no .{ext} files"),
        });
    }
    Ok(stems)
}

/// Reads OBJ meshes and attaches the layout's landmarks.
pub fn read_meshes(paths: &[PathBuf], layout: &UvLayout) -> Result<Vec<Mesh>> {
    paths
        .iter()
        .map(|p| {
            let mut m = Mesh::read_obj(p)?;
            if m.len() != layout.len() {
                return Err(Error::Format {
                    path: p.clone(),
                    reason: format!("{} vertices, the template has {}", m.len(), layout.len()),
                });
            }
            m.landmarks = layout.landmarks.clone();
            Ok(m)
        })
        .collect()
}

pub fn write_meshes(dir: &Path, stems: &[String], meshes: &[Mesh]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (stem, mesh) in stems.iter().zip(meshes) {
        mesh.write_obj(&dir.join(format!("{stem}.obj")))?;
    }
    Ok(())
}

/// Everything training and evaluation read from a preprocessed directory.
pub struct Corpus {
    pub dir: WorkDir,
    pub stems: Vec<String>,
    pub maps: Vec<UvMap>,
    pub targets: Option<Vec<UvMap>>,
    pub layout: UvLayout,
    pub scale: ScaleRecord,
    pub labels: Option<LabelTable>,
}

impl Corpus {
    pub fn load(root: &Path, with_targets: bool) -> Result<Self> {
        let dir = WorkDir::new(root);
        let layout = load_layout(&dir.layout())?;
        let scale = ScaleRecord::load(&dir.scale())?;
        let stems = list_stems(&dir.maps(), "uvf")?;
        let maps = stems
            .iter()
            .map(|s| load_uvmap(&dir.maps().join(format!("{s}.uvf"))))
            .collect::<Result<Vec<_>>>()?;
        let targets = if with_targets {
            Some(
                stems
                    .iter()
                    .map(|s| load_uvmap(&dir.targets().join(format!("{s}.uvf"))))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let labels = if dir.labels().exists() {
            let table = LabelTable::load(&dir.labels())?;
            if let Some(s) = stems.iter().find(|s| table.row(s).is_none()) {
                return Err(Error::Format {
                    path: dir.labels(),
                    reason: format!("no row for {s}"),
                });
            }
            Some(table)
        } else {
            None
        };
        Ok(Corpus {
            dir,
            stems,
            maps,
            targets,
            layout,
            scale,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    fn mesh_paths(&self, dir: PathBuf, items: &[usize]) -> Vec<PathBuf> {
        items.iter().map(|&i| dir.join(format!("{}.obj", self.stems[i]))).collect()
    }

    pub fn aligned(&self, items: &[usize]) -> Result<Vec<Mesh>> {
        read_meshes(&self.mesh_paths(self.dir.aligned(), items), &self.layout)
    }

    pub fn aligned_targets(&self, items: &[usize]) -> Result<Vec<Mesh>> {
        read_meshes(&self.mesh_paths(self.dir.aligned_targets(), items), &self.layout)
    }

    pub fn label_table(&self) -> Result<&LabelTable> {
        self.labels
            .as_ref()
            .filter(|t| t.is_labelled())
            .ok_or_else(|| Error::Format {
                path: self.dir.labels(),
                reason: "labelled training needs a labels.csv with a label on every row".into(),
            })
    }

    fn subject(&self, item: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|t| t.row(&self.stems[item])).map(|r| r.subject)
    }

    /// Train/test item indices. With a label table the split is by subject,
    /// so no subject appears on both sides.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Split {
        if self.labels.is_none() {
            let (train, test) = split_indices(self.len(), train_fraction, seed);
            return Split { train, test };
        }
        let subjects: Vec<usize> = (0..self.len())
            .filter_map(|i| self.subject(i))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let (tr, _) = split_indices(subjects.len(), train_fraction, seed);
        let train_subjects: BTreeSet<usize> = tr.iter().map(|&k| subjects[k]).collect();
        let (train, test) = (0..self.len()).partition(|&i| self.subject(i).is_some_and(|s| train_subjects.contains(&s)));
        Split { train, test }
    }

    /// Input item feeding each item: itself, or with `labelled` the same
    /// subject's label-0 item.
    pub fn input_items(&self, items: &[usize], labelled: bool) -> Result<Vec<usize>> {
        if !labelled {
            return Ok(items.to_vec());
        }
        let table = self.label_table()?;
        let mut neutral = BTreeMap::new();
        for (i, stem) in self.stems.iter().enumerate() {
            let row = table.row(stem).expect("checked at load");
            if row.label == Some(0) {
                neutral.insert(row.subject, i);
            }
        }
        items
            .iter()
            .map(|&i| {
                let subject = self.subject(i).expect("labelled corpus");
                neutral.get(&subject).copied().ok_or_else(|| Error::Format {
                    path: self.dir.labels(),
                    reason: format!("subject {subject} has no label-0 mesh to translate from"),
                })
            })
            .collect()
    }

    pub fn item_labels(&self, items: &[usize]) -> Result<Vec<usize>> {
        let table = self.label_table()?;
        Ok(items
            .iter()
            .map(|&i| table.row(&self.stems[i]).and_then(|r| r.label).expect("labelled table"))
            .collect())
    }

    /// Paired dataset over `items`. The target is the item's own map, or its
    /// paired target with `targets`; with `labelled` the input is the
    /// subject's label-0 map conditioned on the item's label.
    pub fn dataset(&self, items: &[usize], mode: DataMode) -> Result<PairedDataset> {
        let inputs: Vec<UvMap> = self
            .input_items(items, mode.labelled)?
            .into_iter()
            .map(|i| self.maps[i].clone())
            .collect();
        let targets: Vec<UvMap> = match (&self.targets, mode.targets) {
            (Some(t), true) => items.iter().map(|&i| t[i].clone()).collect(),
            (None, true) => {
                return Err(Error::Format {
                    path: self.dir.targets(),
                    reason: "target maps were not loaded".into(),
                })
            }
            (_, false) => items.iter().map(|&i| self.maps[i].clone()).collect(),
        };
        if mode.labelled {
            let labels = self.item_labels(items)?;
            let count = self.label_table()?.label_count();
            PairedDataset::from_pairs(&inputs, &targets, Some((&labels, count)))
        } else {
            PairedDataset::from_pairs(&inputs, &targets, None)
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DataMode {
    pub targets: bool,
    pub labelled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}
