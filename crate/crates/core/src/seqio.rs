//! Sequence ingestion: FASTA/FASTQ parsing, one-sample-per-file datasets, and
//! overlap-aware chunking of samples for parallel statistic extraction.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SeqError {
    #[error("input is empty")]
    EmptyInput,
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("no files matched {0:?}")]
    NoFilesMatched(Vec<String>),
    #[error("invalid glob pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<SeqError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A parsed FASTA/FASTQ record: identifier token and uppercased residues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub header: String,
    pub residues: Vec<u8>,
}

impl Record {
    pub fn new(header: impl Into<String>, residues: impl Into<Vec<u8>>) -> Self {
        Record {
            header: header.into(),
            residues: residues.into(),
        }
    }
}

fn header_token(line: &[u8]) -> String {
    let text = String::from_utf8_lossy(&line[1..]);
    text.split_whitespace().next().unwrap_or("").to_string()
}

fn trim_line(line: &[u8]) -> &[u8] {
    let mut end = line.len();
    while end > 0 && (line[end - 1] == b'\r' || line[end - 1] == b' ' || line[end - 1] == b'\t') {
        end -= 1;
    }
    &line[..end]
}

/// Parse FASTA text. Line breaks are removed and residues uppercased.
pub fn parse_fasta(bytes: &[u8]) -> Result<Vec<Record>, SeqError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(SeqError::EmptyInput);
    }
    let mut records: Vec<Record> = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = trim_line(raw);
        if line.is_empty() {
            continue;
        }
        if line[0] == b'>' {
            records.push(Record::new(header_token(line), Vec::new()));
            continue;
        }
        match records.last_mut() {
            Some(rec) => rec.residues.extend(
                line.iter()
                    .filter(|b| !b.is_ascii_whitespace())
                    .map(u8::to_ascii_uppercase),
            ),
            None => {
                return Err(SeqError::MalformedRecord {
                    line: idx + 1,
                    reason: "sequence data before the first '>' header".into(),
                })
            }
        }
    }
    Ok(records)
}

/// Parse 4-line FASTQ records; quality strings are validated then discarded.
pub fn parse_fastq(bytes: &[u8]) -> Result<Vec<Record>, SeqError> {
    let lines: Vec<(usize, &[u8])> = bytes
        .split(|&b| b == b'\n')
        .map(trim_line)
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(SeqError::EmptyInput);
    }
    let mut records = Vec::with_capacity(lines.len() / 4);
    for group in lines.chunks(4) {
        let line_no = group[0].0 + 1;
        let bad = |reason: &str| SeqError::MalformedRecord {
            line: line_no,
            reason: reason.to_string(),
        };
        if group.len() < 4 {
            return Err(bad("truncated record (expected 4 lines)"));
        }
        let (head, seq, sep, qual) = (group[0].1, group[1].1, group[2].1, group[3].1);
        if head[0] != b'@' {
            return Err(bad("header line does not start with '@'"));
        }
        if sep[0] != b'+' {
            return Err(bad("missing '+' separator line"));
        }
        if seq.len() != qual.len() {
            return Err(bad("quality length differs from sequence length"));
        }
        records.push(Record::new(
            header_token(head),
            seq.iter().map(u8::to_ascii_uppercase).collect::<Vec<u8>>(),
        ));
    }
    Ok(records)
}

/// One input file: an ordered collection of independent fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: usize,
    pub name: String,
    pub fragments: Vec<Vec<u8>>,
}

impl Sample {
    pub fn new(id: usize, name: impl Into<String>, fragments: Vec<Vec<u8>>) -> Self {
        Sample {
            id,
            name: name.into(),
            fragments,
        }
    }

    pub fn total_length(&self) -> usize {
        self.fragments.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub total_length: u64,
    pub mean_length: f64,
}

impl Dataset {
    /// Build a dataset from `(name, fragments)` pairs in the given order,
    /// assigning ids 0..n.
    pub fn from_named<S: Into<String>>(items: Vec<(S, Vec<Vec<u8>>)>) -> Self {
        let samples = items
            .into_iter()
            .enumerate()
            .map(|(id, (name, frags))| {
                let frags = frags.into_iter().filter(|f| !f.is_empty()).collect();
                Sample::new(id, name, frags)
            })
            .collect();
        Dataset::from_samples(samples)
    }

    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let total_length: u64 = samples.iter().map(|s| s.total_length() as u64).sum();
        let mean_length = if samples.is_empty() {
            0.0
        } else {
            total_length as f64 / samples.len() as f64
        };
        Dataset {
            samples,
            total_length,
            mean_length,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.name.clone()).collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, SeqError> {
    let file = File::open(path)?;
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        MultiGzDecoder::new(BufReader::new(file)).read_to_end(&mut buf)?;
    } else {
        BufReader::new(file).read_to_end(&mut buf)?;
    }
    Ok(buf)
}

fn sample_name(path: &Path) -> String {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".gz", ".fasta", ".fa", ".fna", ".fastq", ".fq"] {
        if let Some(stripped) = name.strip_suffix(ext) {
            name = stripped.to_string();
        }
    }
    name
}

/// Parse one FASTA or FASTQ file (format sniffed from the first non-blank byte).
pub fn load_sample(path: &Path, id: usize) -> Result<Sample, SeqError> {
    let wrap = |e: SeqError| SeqError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    };
    let bytes = read_file(path).map_err(wrap)?;
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace()).copied();
    let records = match first {
        None => return Err(wrap(SeqError::EmptyInput)),
        Some(b'@') => parse_fastq(&bytes),
        Some(_) => parse_fasta(&bytes),
    }
    .map_err(wrap)?;
    let fragments = records
        .into_iter()
        .map(|r| r.residues)
        .filter(|r| !r.is_empty())
        .collect();
    Ok(Sample::new(id, sample_name(path), fragments))
}

/// Expand globs, sort the matches by file name and load one sample per file.
pub fn load_dataset<S: AsRef<str>>(patterns: &[S]) -> Result<Dataset, SeqError> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for pattern in patterns {
        let pattern = pattern.as_ref();
        let matches = glob::glob(pattern).map_err(|e| SeqError::BadPattern {
            pattern: pattern.to_string(),
            reason: e.to_string(),
        })?;
        paths.extend(matches.filter_map(Result::ok).filter(|p| p.is_file()));
    }
    if paths.is_empty() {
        return Err(SeqError::NoFilesMatched(
            patterns.iter().map(|p| p.as_ref().to_string()).collect(),
        ));
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    paths.dedup();
    let samples = paths
        .iter()
        .enumerate()
        .map(|(id, p)| load_sample(p, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::from_samples(samples))
}

/// A slice of one fragment handed to a Stage-1 worker.
///
/// `body` starts `left_overlap` residues before the chunk's own region and may
/// extend up to `overlap` residues past it, so every window that starts inside
/// the region fits in the body. Extraction skips the first `left_overlap`
/// window starts; the windows produced by all chunks of a fragment are then
/// exactly the windows of the fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub sample_id: usize,
    pub fragment_id: usize,
    pub offset: usize,
    pub body: &'a [u8],
    pub left_overlap: usize,
    /// Length of the region this chunk owns (starting at `left_overlap`).
    pub core_len: usize,
}

impl<'a> Chunk<'a> {
    /// Residues owned by this chunk; concatenating the cores of a fragment's
    /// chunks reproduces the fragment.
    pub fn core(&self) -> &'a [u8] {
        &self.body[self.left_overlap..self.left_overlap + self.core_len]
    }

    /// Window start positions (relative to `body`) that this chunk must emit
    /// for windows of the given length.
    pub fn window_starts(&self, width: usize) -> std::ops::Range<usize> {
        if width == 0 || self.body.len() < width {
            return 0..0;
        }
        let last = self.body.len() - width + 1;
        let first = self.left_overlap.min(last);
        first..last.min(self.left_overlap + self.core_len).max(first)
    }
}

fn chunk_fragment<'a>(
    sample_id: usize,
    fragment_id: usize,
    fragment: &'a [u8],
    target: usize,
    overlap: usize,
    out: &mut Vec<Chunk<'a>>,
) {
    let len = fragment.len();
    if len == 0 {
        return;
    }
    let target = target.max(overlap + 1).max(1);
    let pieces = len.div_ceil(target).max(1);
    for i in 0..pieces {
        let start = i * len / pieces;
        let end = (i + 1) * len / pieces;
        let left_overlap = start.min(overlap);
        let body_start = start - left_overlap;
        let body_end = (end + overlap).min(len);
        out.push(Chunk {
            sample_id,
            fragment_id,
            offset: body_start,
            body: &fragment[body_start..body_end],
            left_overlap,
            core_len: end - start,
        });
    }
}

/// Split one sample into about `slices` chunks of similar length.
pub fn chunk_sample(sample: &Sample, slices: usize, overlap: usize) -> Vec<Chunk<'_>> {
    let target = sample.total_length().div_ceil(slices.max(1));
    let mut out = Vec::new();
    for (fid, frag) in sample.fragments.iter().enumerate() {
        chunk_fragment(sample.id, fid, frag, target, overlap, &mut out);
    }
    out
}

/// Split a whole dataset into about `slices` chunks; the chunk length target
/// is shared across samples so work units have comparable size.
pub fn chunk_dataset(dataset: &Dataset, slices: usize, overlap: usize) -> Vec<Chunk<'_>> {
    let target = (dataset.total_length as usize).div_ceil(slices.max(1));
    let mut out = Vec::new();
    for sample in &dataset.samples {
        for (fid, frag) in sample.fragments.iter().enumerate() {
            chunk_fragment(sample.id, fid, frag, target, overlap, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fasta_minimal() {
        assert_eq!(
            parse_fasta(b">a\nACGT\n").unwrap(),
            vec![Record::new("a", "ACGT")]
        );
    }

    #[test]
    fn fasta_wrapping_and_case() {
        let recs = parse_fasta(b">a desc\nac\ngt\n>b\nTT\n").unwrap();
        assert_eq!(recs, vec![Record::new("a", "ACGT"), Record::new("b", "TT")]);
    }

    #[test]
    fn fasta_missing_header() {
        assert!(matches!(
            parse_fasta(b"ACGT\n"),
            Err(SeqError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(parse_fasta(b"  \n"), Err(SeqError::EmptyInput)));
    }

    #[test]
    fn fastq_records() {
        assert_eq!(
            parse_fastq(b"@r1\nACGT\n+\nIIII\n").unwrap(),
            vec![Record::new("r1", "ACGT")]
        );
        let two = parse_fastq(b"@r1\nacgt\n+\nIIII\n@r2 x\nGG\n+r2\nII\n").unwrap();
        assert_eq!(
            two,
            vec![Record::new("r1", "ACGT"), Record::new("r2", "GG")]
        );
    }

    #[test]
    fn fastq_errors() {
        assert!(matches!(
            parse_fastq(b"@r1\nACGT\n+\nIII\n"),
            Err(SeqError::MalformedRecord { .. })
        ));
        assert!(matches!(
            parse_fastq(b"@r1\nACGT\nIIII\n@r2\n"),
            Err(SeqError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn two_chunk_example() {
        let s = Sample::new(0, "s", vec![b"ABCDEFGH".to_vec()]);
        let chunks = chunk_sample(&s, 2, 2);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].body, b"ABCDEF");
        assert_eq!(chunks[0].left_overlap, 0);
        assert_eq!(chunks[1].body, b"CDEFGH");
        assert_eq!((chunks[1].offset, chunks[1].left_overlap), (2, 2));

        // every length-3 window produced exactly once
        let mut seen: Vec<&[u8]> = Vec::new();
        for c in &chunks {
            for st in c.window_starts(3) {
                seen.push(&c.body[st..st + 3]);
            }
        }
        let expected: Vec<&[u8]> = b"ABCDEFGH".windows(3).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn short_fragment_single_chunk() {
        let s = Sample::new(0, "s", vec![b"ACGTA".to_vec(), vec![b'A'; 15]]);
        // total 20, slices 2 -> target 10
        let chunks = chunk_sample(&s, 2, 2);
        assert_eq!(chunks[0].body, b"ACGTA");
        assert_eq!(chunks[0].left_overlap, 0);
    }

    #[test]
    fn zero_overlap_reconstructs() {
        let frag: Vec<u8> = b"ACGTACGTTTGGCCAA".to_vec();
        let s = Sample::new(0, "s", vec![frag.clone()]);
        let chunks = chunk_sample(&s, 4, 0);
        assert_eq!(chunks.len(), 4);
        let joined: Vec<u8> = chunks.iter().flat_map(|c| c.body.iter().copied()).collect();
        assert_eq!(joined, frag);
        assert!(chunks.iter().all(|c| c.body.len() == 4));
    }

    #[test]
    fn load_dataset_orders_by_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.fa"), ">x\nAC\n").unwrap();
        std::fs::write(dir.path().join("a.fa"), ">y\nGT\n>z\nTT\n").unwrap();
        std::fs::write(
            dir.path().join("c.fq"),
            "@r1\nA\n+\nI\n@r2\nC\n+\nI\n@r3\nG\n+\nI\n",
        )
        .unwrap();
        let pat = format!("{}/*", dir.path().display());
        let ds = load_dataset(&[pat]).unwrap();
        assert_eq!(ds.labels(), vec!["a", "b", "c"]);
        assert_eq!(
            ds.samples.iter().map(|s| s.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(ds.samples[2].fragments.len(), 3);
        assert_eq!(ds.total_length, 4 + 2 + 3);
        assert!((ds.mean_length - 3.0).abs() < 1e-12);
    }

    #[test]
    fn load_dataset_errors() {
        let dir = tempfile::tempdir().unwrap();
        let pat = format!("{}/*.fasta", dir.path().display());
        assert!(matches!(
            load_dataset(&[pat]),
            Err(SeqError::NoFilesMatched(_))
        ));
        std::fs::write(dir.path().join("bad.fasta"), "ACGT\n").unwrap();
        let pat = format!("{}/*.fasta", dir.path().display());
        let err = load_dataset(&[pat]).unwrap_err();
        assert!(matches!(err, SeqError::InFile { .. }));
        assert!(err.to_string().contains("bad.fasta"));
    }

    #[test]
    fn gzip_input() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(b">a\nacgt\n").unwrap();
        std::fs::write(dir.path().join("s.fa.gz"), enc.finish().unwrap()).unwrap();
        let s = load_sample(&dir.path().join("s.fa.gz"), 0).unwrap();
        assert_eq!(s.name, "s");
        assert_eq!(s.fragments, vec![b"ACGT".to_vec()]);
    }
}
