use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use dahcrf_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};

const INIT_RANGE: f64 = 0.25;

/// `[rows × dim]` table drawn from uniform(-0.25, 0.25) with a zero PAD row.
pub fn random_embeddings<F: Float>(rows: usize, dim: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<F> = (0..rows * dim)
        .map(|_| F::of(rng.random_range(-INIT_RANGE..INIT_RANGE)))
        .collect();
    if rows > PAD {
        data[PAD * dim..(PAD + 1) * dim].fill(F::zero());
    }
    Tensor::new(data, &[rows, dim]).expect("shape matches data")
}

/// Reads `token v1 .. vD` lines. Rows of vocabulary words found in the file
/// take the file vector; all other rows keep their random initialisation and
/// the PAD row is zero.
pub fn load_embeddings<F: Float>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor<F>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = random_embeddings::<F>(vocab.len(), dim, seed);
    {
        let mut data = table.data_mut();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let parse_err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else {
                continue;
            };
            let values: Vec<&str> = fields.collect();
            if values.len() != dim {
                return Err(parse_err(format!(
                    "expected {dim} values for {token:?}, found {}",
                    values.len()
                )));
            }
            if !vocab.contains(token) {
                continue;
            }
            let row = vocab.word_id(token);
            for (j, v) in values.iter().enumerate() {
                let x: f64 = v
                    .parse()
                    .map_err(|_| parse_err(format!("invalid number {v:?}")))?;
                data[row * dim + j] = F::of(x);
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["cat".to_string(), "dog".to_string()], "catdog".chars())
    }

    #[test]
    fn file_rows_are_copied_and_pad_is_zero() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 0.5 -1 2").unwrap();
        writeln!(f, "bird 9 9 9").unwrap();
        let v = vocab();
        let t: Tensor<f64> = load_embeddings(f.path(), &v, 3, 1).unwrap();
        let d = t.to_vec();
        let cat = v.word_id("cat");
        assert_eq!(&d[cat * 3..cat * 3 + 3], &[0.5, -1.0, 2.0]);
        assert_eq!(&d[0..3], &[0.0, 0.0, 0.0]);
        let dog = v.word_id("dog");
        assert!(d[dog * 3..dog * 3 + 3].iter().all(|x| x.abs() < 0.25));
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 1 2 3").unwrap();
        writeln!(f, "dog 1 2").unwrap();
        match load_embeddings::<f32>(f.path(), &vocab(), 3, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
