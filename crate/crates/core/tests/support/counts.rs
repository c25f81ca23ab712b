use fetr_core::backbone::NetworkSpec;

/// Layer-by-layer parameter total written out independently of the store.
pub fn analytic_count(spec: &NetworkSpec) -> usize {
    let r = spec.se_reduction;
    let mut total = 48 * spec.base_width + 2 * spec.base_width;
    let mut c_in = spec.base_width;
    for stage in 0..4 {
        let w = spec.base_width << stage;
        for b in 0..spec.stage_depths[stage] {
            let se = 2 * w * w / r;
            if stage < 2 {
                total += 9 * c_in * w + 2 * w + 9 * w * w + 2 * w + se;
                if spec.stylerm {
                    total += 9 * w + 2 * w + 2 * w;
                }
                if c_in != w {
                    total += c_in * w + 2 * w;
                }
                c_in = w;
            } else {
                let out = 4 * w;
                total += c_in * w + 2 * w + 9 * w * w + 2 * w + se + w * out + 2 * out;
                if spec.dca_stages.contains(&(stage + 1)) {
                    let cq = (w / 8).max(1);
                    total += 3 * w + 2 * w * cq + w * w;
                }
                let stride2 = b == 0 && stage == 2;
                if c_in != out || stride2 {
                    total += c_in * out + 2 * out;
                }
                c_in = out;
            }
        }
    }
    total + c_in * spec.num_classes + spec.num_classes
}
