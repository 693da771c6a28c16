//! Row-list JSON layout for nalgebra matrices.

use nalgebra::DMatrix;
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

pub fn rows<T: Clone + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn from_rows<T: Clone + nalgebra::Scalar>(r: &[Vec<T>], ncols_hint: usize) -> Option<DMatrix<T>> {
    let nrows = r.len();
    let ncols = r.first().map_or(ncols_hint, |x| x.len());
    if r.iter().any(|x| x.len() != ncols) {
        return None;
    }
    let flat: Vec<T> = r.iter().flat_map(|x| x.iter().cloned()).collect();
    Some(DMatrix::from_row_slice(nrows, ncols, &flat))
}

pub fn serialize<S, T>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error>
where
    S: Serializer,
    T: Serialize + Clone + nalgebra::Scalar,
{
    rows(m).serialize(s)
}

pub fn deserialize<'de, D, T>(d: D) -> Result<DMatrix<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de> + Clone + nalgebra::Scalar,
{
    let r: Vec<Vec<T>> = Vec::deserialize(d)?;
    from_rows(&r, 0).ok_or_else(|| D::Error::custom("ragged matrix rows"))
}
