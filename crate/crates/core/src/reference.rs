//! Published laboratory measurements of the link at 100 MHz and 1 GHz with the
//! `10101010` word, used as comparison targets by the `tables` driver.

/// One measured distance: raw rate plus sifted/net rate and QBER at the two
/// window settings of its table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub distance_km: f64,
    pub r_raw: f64,
    pub r_sift: [f64; 2],
    /// `None` where no secure rate was quoted.
    pub r_net: [Option<f64>; 2],
    pub qber_percent: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTable {
    pub name: &'static str,
    pub clock_hz: f64,
    /// Window fractions of the bit width for the two column groups.
    pub windows: [f64; 2],
    pub rows: Vec<ReferenceRow>,
}

const fn row(d: f64, raw: f64, s: [f64; 2], n: [Option<f64>; 2], q: [f64; 2]) -> ReferenceRow {
    ReferenceRow {
        distance_km: d,
        r_raw: raw,
        r_sift: s,
        r_net: n,
        qber_percent: q,
    }
}

/// 100 MHz, windows of 5 ns and 9 ns.
pub fn table_100mhz() -> ReferenceTable {
    ReferenceTable {
        name: "100MHz",
        clock_hz: 100e6,
        windows: [0.5, 0.9],
        rows: vec![
            row(
                0.0,
                119_257.0,
                [61_948.0, 117_698.0],
                [Some(41_147.0), Some(77_671.0)],
                [0.4, 0.4],
            ),
            row(
                2.15,
                39_450.0,
                [20_419.0, 38_675.0],
                [Some(12_930.0), Some(24_329.0)],
                [0.7, 0.8],
            ),
            row(
                3.75,
                16_298.0,
                [8_569.0, 15_839.0],
                [Some(4_971.0), Some(9_073.0)],
                [1.4, 1.5],
            ),
            row(
                4.19,
                15_122.0,
                [7_805.0, 14_807.0],
                [Some(4_583.0), Some(8_639.0)],
                [1.3, 1.4],
            ),
            row(
                6.16,
                5_595.0,
                [2_882.0, 5_361.0],
                [Some(1_357.0), Some(2_505.0)],
                [3.0, 3.0],
            ),
            row(
                8.08,
                2_401.0,
                [1_220.0, 2_192.0],
                [Some(293.0), Some(520.0)],
                [6.9, 7.0],
            ),
            row(9.96, 1_109.0, [554.0, 917.0], [None, None], [15.6, 15.7]),
            row(11.07, 990.0, [493.0, 717.0], [None, None], [24.3, 28.4]),
            row(11.85, 611.0, [291.0, 425.0], [None, None], [31.8, 32.3]),
        ],
    }
}

/// 1 GHz, windows of 0.5 ns and 0.98 ns.
pub fn table_1ghz() -> ReferenceTable {
    ReferenceTable {
        name: "1GHz",
        clock_hz: 1e9,
        windows: [0.5, 0.98],
        rows: vec![
            row(
                0.0,
                1_415_588.0,
                [1_011_117.0, 1_409_336.0],
                [Some(570_123.0), Some(465_665.0)],
                [1.6, 5.3],
            ),
            row(
                2.15,
                856_095.0,
                [623_867.0, 853_987.0],
                [Some(360_616.0), Some(311_190.0)],
                [1.4, 4.7],
            ),
            row(
                3.75,
                354_372.0,
                [260_216.0, 353_866.0],
                [Some(147_660.0), Some(126_302.0)],
                [1.6, 4.8],
            ),
            row(
                4.19,
                307_738.0,
                [228_251.0, 307_103.0],
                [Some(132_350.0), Some(116_868.0)],
                [1.4, 4.4],
            ),
            row(
                6.16,
                112_844.0,
                [84_237.0, 112_565.0],
                [Some(48_366.0), Some(42_799.0)],
                [1.5, 4.4],
            ),
            row(
                8.08,
                43_282.0,
                [32_299.0, 43_128.0],
                [Some(18_076.0), Some(15_824.0)],
                [1.7, 4.7],
            ),
            row(
                9.96,
                18_278.0,
                [13_363.0, 18_174.0],
                [Some(7_111.0), Some(6_062.0)],
                [2.1, 5.2],
            ),
            row(
                11.07,
                16_277.0,
                [8_502.0, 11_679.0],
                [Some(4_073.0), Some(3_045.0)],
                [2.8, 6.6],
            ),
            row(
                11.85,
                7_231.0,
                [5_223.0, 7_145.0],
                [Some(2_494.0), Some(1_908.0)],
                [2.9, 6.4],
            ),
            row(
                13.15,
                3_494.0,
                [2_467.0, 3_429.0],
                [Some(882.0), Some(432.0)],
                [4.8, 9.2],
            ),
            row(15.45, 1_317.0, [865.0, 1_265.0], [Some(53.0), None], [10.6, 15.8]),
            row(17.20, 725.0, [435.0, 682.0], [None, None], [18.4, 24.3]),
        ],
    }
}

pub fn tables() -> [ReferenceTable; 2] {
    [table_100mhz(), table_1ghz()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_ordered_and_consistent() {
        for t in tables() {
            for w in t.rows.windows(2) {
                assert!(w[0].distance_km < w[1].distance_km);
            }
            for r in &t.rows {
                assert!(r.r_sift[0] <= r.r_sift[1]);
                assert!(r.r_sift[1] <= r.r_raw);
                for i in 0..2 {
                    if let Some(n) = r.r_net[i] {
                        assert!(n <= r.r_sift[i]);
                    }
                }
            }
        }
    }
}
