use super::{ClassMap, DwClass, EsaClass, SynthError};

/// Pixels both products label as water, and their fraction.
pub fn water_consensus(dw: &ClassMap, esa: &ClassMap) -> Result<(Vec<bool>, f64), SynthError> {
    if dw.height() != esa.height() || dw.width() != esa.width() {
        return Err(SynthError::Dimension(format!(
            "land-cover maps differ: {}x{} vs {}x{}",
            dw.height(),
            dw.width(),
            esa.height(),
            esa.width()
        )));
    }
    let mask: Vec<bool> = dw
        .data()
        .iter()
        .zip(esa.data())
        .map(|(&d, &e)| d == DwClass::Water.id() && e == EsaClass::PermanentWater.id())
        .collect();
    let n = mask.len().max(1) as f64;
    let fraction = mask.iter().filter(|&&m| m).count() as f64 / n;
    Ok((mask, fraction))
}
