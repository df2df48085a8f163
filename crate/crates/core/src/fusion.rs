//! Training-free plug-in fusion: overwrite the backbone's corresponding
//! parameters with the trained proxy's values.

use crate::compression::Correspondence;
use crate::error::Result;
use crate::params::FlatParams;

/// Copy of `backbone` with every proxy-covered dimension replaced by the
/// proxy value. Dimensions outside the correspondence are untouched.
pub fn plug_in_fuse(backbone: &FlatParams, proxy: &FlatParams, corr: &Correspondence) -> Result<FlatParams> {
    corr.check_backbone(backbone)?;
    corr.check_proxy(proxy)?;
    let mut fused = backbone.clone();
    let out = fused.values_mut();
    for (src, dst) in proxy.values().iter().zip(corr.dim_map()) {
        out[dst] = *src;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::params::ParamLayout;

    fn setup() -> (FlatParams, FlatParams, Correspondence) {
        let backbone_layout = Arc::new(ParamLayout::packed([("a", 2), ("b", 2)]).unwrap());
        let proxy_layout = Arc::new(ParamLayout::packed([("a", 2)]).unwrap());
        let corr = Correspondence::new(proxy_layout.clone(), backbone_layout.clone(), vec![(0, 0)]).unwrap();
        let backbone = FlatParams::new(backbone_layout, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let proxy = FlatParams::new(proxy_layout, vec![9.0, 9.0]).unwrap();
        (backbone, proxy, corr)
    }

    #[test]
    fn replaces_covered_dims() {
        let (backbone, proxy, corr) = setup();
        let fused = plug_in_fuse(&backbone, &proxy, &corr).unwrap();
        assert_eq!(fused.values(), &[9.0, 9.0, 3.0, 4.0]);
        let twice = plug_in_fuse(&fused, &proxy, &corr).unwrap();
        assert_eq!(twice, fused);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (backbone, proxy, corr) = setup();
        assert!(plug_in_fuse(&proxy, &proxy, &corr).is_err());
        assert!(plug_in_fuse(&backbone, &backbone, &corr).is_err());
    }
}
