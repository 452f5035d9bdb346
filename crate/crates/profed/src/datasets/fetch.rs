//! Download and cache raw dataset archives.
//!
//! Layout under the target directory is `{name}/raw/<files>` plus a
//! `{name}/manifest.json` recording byte length and SHA-256 of every raw
//! file. A later fetch with an intact manifest touches no network; corrupted
//! files are detected against the manifest, removed and reported.

use std::collections::HashMap;
use std::io::{Read, Seek};
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock, Mutex};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::DatasetKind;

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

const EMNIST_FILES: [&str; 4] = [
    "emnist-letters-train-images-idx3-ubyte",
    "emnist-letters-train-labels-idx1-ubyte",
    "emnist-letters-test-images-idx3-ubyte",
    "emnist-letters-test-labels-idx1-ubyte",
];

const CIFAR10_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

const CIFAR100_FILES: [&str; 2] = ["train.bin", "test.bin"];

enum Source {
    /// One gzip archive per expected file at `{base}{file}.gz`.
    GzipPerFile { base: &'static str },
    /// Single tar.gz whose members sit under `prefix/`.
    TarGz { url: &'static str, prefix: &'static str },
    /// Single zip of per-file gzips at `prefix/{file}.gz`.
    ZipOfGzips { url: &'static str, prefix: &'static str },
}

fn plan(kind: DatasetKind) -> (Vec<&'static str>, Source) {
    match kind {
        DatasetKind::Mnist => (
            MNIST_FILES.to_vec(),
            Source::GzipPerFile {
                base: "https://ossci-datasets.s3.amazonaws.com/mnist/",
            },
        ),
        DatasetKind::FashionMnist => (
            MNIST_FILES.to_vec(),
            Source::GzipPerFile {
                base: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
            },
        ),
        DatasetKind::Emnist => (
            EMNIST_FILES.to_vec(),
            Source::ZipOfGzips {
                url: "https://biometrics.nist.gov/cs_links/EMNIST/gzip.zip",
                prefix: "gzip",
            },
        ),
        DatasetKind::Cifar10 => (
            CIFAR10_FILES.to_vec(),
            Source::TarGz {
                url: "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
                prefix: "cifar-10-batches-bin",
            },
        ),
        DatasetKind::Cifar100 => (
            CIFAR100_FILES.to_vec(),
            Source::TarGz {
                url: "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
                prefix: "cifar-100-binary",
            },
        ),
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Sidecar written next to `raw/` after a successful fetch.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FetchManifest {
    pub dataset: String,
    pub files: Vec<FileRecord>,
}

impl FetchManifest {
    pub fn path_for(kind: DatasetKind, target_dir: &Path) -> PathBuf {
        target_dir.join(kind.name()).join("manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, body)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn sha256_hex(path: &Path) -> Result<(u64, String)> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((total, hex))
}

fn record_files(kind: DatasetKind, raw: &Path, files: &[&str]) -> Result<FetchManifest> {
    let mut records = Vec::with_capacity(files.len());
    for name in files {
        let (bytes, sha256) = sha256_hex(&raw.join(name))?;
        records.push(FileRecord {
            name: name.to_string(),
            bytes,
            sha256,
        });
    }
    Ok(FetchManifest {
        dataset: kind.name().to_string(),
        files: records,
    })
}

fn verify(manifest: &FetchManifest, raw: &Path) -> Result<()> {
    for rec in &manifest.files {
        let path = raw.join(&rec.name);
        if !path.is_file() {
            return Err(Error::ChecksumMismatch {
                path,
                expected: format!("{} bytes, sha256 {}", rec.bytes, rec.sha256),
                actual: "missing file".to_string(),
            });
        }
        let (bytes, sha256) = sha256_hex(&path)?;
        if bytes != rec.bytes || sha256 != rec.sha256 {
            let _ = std::fs::remove_file(&path);
            return Err(Error::ChecksumMismatch {
                path,
                expected: format!("{} bytes, sha256 {}", rec.bytes, rec.sha256),
                actual: format!("{bytes} bytes, sha256 {sha256}"),
            });
        }
    }
    Ok(())
}

static FETCH_LOCKS: LazyLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

fn lock_for(kind: DatasetKind) -> Arc<Mutex<()>> {
    FETCH_LOCKS
        .lock()
        .unwrap()
        .entry(kind.name().to_string())
        .or_default()
        .clone()
}

fn download_to(url: &str, dest: &Path) -> Result<()> {
    let client = reqwest::blocking::Client::builder()
        .connect_timeout(std::time::Duration::from_secs(30))
        .timeout(None)
        .build()
        .map_err(|e| Error::Download {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
    let mut resp = client
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| Error::Download {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
    let mut file = std::fs::File::create(dest)
        .map_err(|e| Error::io(format!("creating {}", dest.display()), e))?;
    std::io::copy(&mut resp, &mut file).map_err(|e| Error::Download {
        url: url.to_string(),
        reason: e.to_string(),
    })?;
    Ok(())
}

fn gunzip_into(mut src: impl Read, dest: &Path) -> Result<()> {
    let mut decoder = flate2::read::GzDecoder::new(&mut src);
    let mut out = std::fs::File::create(dest)
        .map_err(|e| Error::io(format!("creating {}", dest.display()), e))?;
    std::io::copy(&mut decoder, &mut out)
        .map_err(|e| Error::io(format!("decompressing into {}", dest.display()), e))?;
    Ok(())
}

fn unpack(source: &Source, files: &[&str], raw: &Path, scratch: &Path) -> Result<()> {
    match source {
        Source::GzipPerFile { base } => {
            for name in files {
                let url = format!("{base}{name}.gz");
                let tmp = scratch.join(format!("{name}.gz"));
                download_to(&url, &tmp)?;
                let archive = std::fs::File::open(&tmp)
                    .map_err(|e| Error::io(format!("opening {}", tmp.display()), e))?;
                gunzip_into(archive, &raw.join(name))?;
                let _ = std::fs::remove_file(&tmp);
            }
        }
        Source::TarGz { url, prefix } => {
            let tmp = scratch.join("archive.tar.gz");
            download_to(url, &tmp)?;
            let archive = std::fs::File::open(&tmp)
                .map_err(|e| Error::io(format!("opening {}", tmp.display()), e))?;
            let mut tar = tar::Archive::new(flate2::read::GzDecoder::new(archive));
            let wanted: Vec<PathBuf> =
                files.iter().map(|f| Path::new(prefix).join(f)).collect();
            for entry in tar
                .entries()
                .map_err(|e| Error::io(format!("reading {}", tmp.display()), e))?
            {
                let mut entry =
                    entry.map_err(|e| Error::io(format!("reading {}", tmp.display()), e))?;
                let path = entry
                    .path()
                    .map_err(|e| Error::io(format!("reading {}", tmp.display()), e))?
                    .into_owned();
                if let Some(pos) = wanted.iter().position(|w| w == &path) {
                    let dest = raw.join(files[pos]);
                    entry
                        .unpack(&dest)
                        .map_err(|e| Error::io(format!("unpacking {}", dest.display()), e))?;
                }
            }
            let _ = std::fs::remove_file(&tmp);
        }
        Source::ZipOfGzips { url, prefix } => {
            let tmp = scratch.join("archive.zip");
            download_to(url, &tmp)?;
            let mut file = std::fs::File::open(&tmp)
                .map_err(|e| Error::io(format!("opening {}", tmp.display()), e))?;
            file.rewind()
                .map_err(|e| Error::io(format!("opening {}", tmp.display()), e))?;
            let mut zip = zip::ZipArchive::new(file)
                .map_err(|e| Error::io(format!("reading {}", tmp.display()), std::io::Error::other(e)))?;
            for name in files {
                let member = format!("{prefix}/{name}.gz");
                let entry = zip.by_name(&member).map_err(|e| {
                    Error::io(format!("extracting {member}"), std::io::Error::other(e))
                })?;
                gunzip_into(entry, &raw.join(name))?;
            }
            let _ = std::fs::remove_file(&tmp);
        }
    }
    for name in files {
        let dest = raw.join(name);
        if !dest.is_file() {
            return Err(Error::Download {
                url: "archive".to_string(),
                reason: format!("expected member {name} was not produced"),
            });
        }
    }
    Ok(())
}

/// Ensures the raw files of `kind` exist and match the manifest under
/// `target_dir`, downloading on first use. Returns the `raw/` directory.
///
/// Single-flight per dataset within a process; repeated calls with an intact
/// manifest verify checksums and return without touching the network.
pub fn fetch_dataset(kind: DatasetKind, target_dir: &Path) -> Result<PathBuf> {
    let lock = lock_for(kind);
    let _guard = lock.lock().unwrap();

    let dataset_dir = target_dir.join(kind.name());
    let raw = dataset_dir.join("raw");
    let manifest_path = FetchManifest::path_for(kind, target_dir);
    let (files, source) = plan(kind);

    if manifest_path.is_file() {
        let manifest = FetchManifest::load(&manifest_path)?;
        verify(&manifest, &raw)?;
        return Ok(raw);
    }

    std::fs::create_dir_all(&raw)
        .map_err(|e| Error::io(format!("creating {}", raw.display()), e))?;

    // Pre-placed files (or a finished earlier download) just get recorded.
    if !files.iter().all(|f| raw.join(f).is_file()) {
        unpack(&source, &files, &raw, &dataset_dir)?;
    }
    let manifest = record_files(kind, &raw, &files)?;
    manifest.save(&manifest_path)?;
    Ok(raw)
}
