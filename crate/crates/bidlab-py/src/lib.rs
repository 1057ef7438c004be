use pyo3::prelude::*;

#[pymodule]
fn bidlab_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
