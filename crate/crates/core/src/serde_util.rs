use serde::{Deserialize, Deserializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Accepts `1.0` as shorthand for `[1.0]`.
pub fn scalar_or_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Ok(match ScalarOrVec::deserialize(d)? {
        ScalarOrVec::Scalar(v) => vec![v],
        ScalarOrVec::Vector(v) => v,
    })
}

/// Accepts `[1.0, 2.0]` as shorthand for `[[1.0], [2.0]]`.
pub fn scalars_or_vecs<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
    let raw: Vec<ScalarOrVec> = Vec::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|p| match p {
            ScalarOrVec::Scalar(v) => vec![v],
            ScalarOrVec::Vector(v) => v,
        })
        .collect())
}
