//! Analyses over trained tokenizers: per-band transfer, the synchronized
//! rate/window robustness sweep, intrinsic metrics and report files.

mod intrinsic;
mod measure;
mod report;
mod systems;

pub use intrinsic::*;
pub use measure::*;
pub use report::*;
pub use systems::*;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{AudioBuffer, BandSpec, ProbeKind};
    use crate::pipeline::{AnalysisConfig, Clip};
    use crate::objectives::Transcript;

    fn setup() -> (Vec<BandSpec>, ProbeSet, Vec<f64>) {
        let a = AnalysisConfig::default();
        (a.bands.clone(), ProbeSet::from_config(&a), a.ratios.clone())
    }

    #[test]
    fn identity_retains_everything() {
        let (bands, probes, _) = setup();
        let id = IdentitySystem { rate: 24_000 };
        let r = measure_transfer(&id, "identity", "none", &bands, &probes).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert!((row.retention - 1.0).abs() < 1e-6, "{row:?}");
        }
    }

    #[test]
    fn ideal_lowpass_calibration() {
        let (bands, probes, _) = setup();
        let lp = IdealLowpass { rate: 24_000, cutoff_hz: 4000.0 };
        let r = measure_transfer(&lp, "lp", "none", &bands, &probes).unwrap();
        assert!(r.retention("lp", 2000.0).unwrap() > 0.95);
        assert!(r.retention("lp", 5000.0).unwrap() < 0.05);
        assert!(r.retention("lp", 8000.0).unwrap() < 0.05);
    }

    #[test]
    fn silent_band_is_rejected() {
        let bands = vec![BandSpec::new(2000.0, 500.0), BandSpec::new(8000.0, 500.0)];
        let probes = ProbeSet {
            probes: vec![
                ProbeKind::Sine { freq_hz: 2000.0, amplitude: 0.5 },
                ProbeKind::Multitone { freqs_hz: vec![2000.0, 8000.0] },
            ],
            version: 1,
            duration_s: 0.2,
            seed: 1,
        };
        let id = IdentitySystem { rate: 24_000 };
        let r = measure_transfer(&id, "id", "x", &bands, &probes).unwrap();
        assert_eq!(r.rejected.len(), 1);
        assert!(r.rejected[0].contains("sine 2000"));
        assert_eq!(r.rows[1].probes_used, 1);
        let only_sine = ProbeSet { probes: vec![probes.probes[0].clone()], ..probes };
        assert!(measure_transfer(&id, "id", "x", &bands, &only_sine).is_err());
    }

    #[test]
    fn robustness_baseline_matches_transfer() {
        let (bands, probes, ratios) = setup();
        let lp = IdealLowpass { rate: 24_000, cutoff_hz: 6000.0 };
        let id = IdentitySystem { rate: 24_000 };
        let rob = measure_robustness(&[("lp", "a", &lp), ("id", "b", &id)], &ratios, &bands, &probes).unwrap();
        let tr = measure_transfer(&lp, "lp", "a", &bands, &probes).unwrap();
        assert!((rob.row("lp", 1.0).unwrap().score - tr.mean("lp").unwrap()).abs() < 1e-9);
        for &r in &ratios {
            let row = rob.row("id", r).unwrap();
            assert!((row.score - 1.0).abs() < 1e-3, "{row:?}");
        }
        // 12 kHz sampling puts the 8 kHz band past Nyquist
        assert_eq!(rob.row("id", 0.5).unwrap().bands_used, 2);
        assert!(rob.warnings.iter().any(|w| w.contains("ratio 0.5")));
        assert!(measure_robustness(&[("id", "b", &id)], &[0.5], &bands, &probes).is_err());
    }

    #[test]
    fn reports_roundtrip_exactly() {
        let (bands, probes, ratios) = setup();
        let lp = IdealLowpass { rate: 24_000, cutoff_hz: 4000.0 };
        let tr = measure_transfer(&lp, "lp", "ck-1", &bands, &probes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_report(&Report::Transfer(&tr), &p, ReportFormat::Delimited, "abc").unwrap();
        let table = read_report(&p).unwrap();
        assert_eq!(table.meta_value("config_hash").unwrap(), "abc");
        assert_eq!(TransferReport::from_table(&table).unwrap(), tr);
        let bytes = std::fs::read(&p).unwrap();
        emit_report(&Report::Transfer(&tr), &p, ReportFormat::Delimited, "abc").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);

        let rob = measure_robustness(&[("lp", "ck-1", &lp)], &ratios, &bands, &probes).unwrap();
        let t = rob.to_table("abc");
        assert_eq!(RobustnessReport::from_table(&ReportTable::parse(&t.render().unwrap()).unwrap()).unwrap(), rob);

        let plot = Report::Robustness(&rob).table(ReportFormat::PlotTable, "abc");
        assert_eq!(plot.header, PLOT_HEADER);
        assert_eq!(plot.rows.len(), ratios.len());
        assert!(emit_report(&Report::Transfer(&tr), &dir.path().join("no/such/dir/x.csv"), ReportFormat::Delimited, "").is_err());
    }

    #[test]
    fn intrinsic_metrics_on_stubs() {
        let audio = AudioBuffer::new((0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect(), 24_000).unwrap();
        let clip = Clip {
            id: "a".into(),
            audio: audio.clone(),
            transcript: Transcript::from_text("a"),
        };
        let r = intrinsic_eval(&IdentitySystem { rate: 24_000 }, "id", "x", &[clip.clone()]).unwrap();
        assert_eq!(r.snr_db, SNR_CAP_DB);
        assert_eq!(r.mel_distance, 0.0);
        assert_eq!(mel_distance(&audio, &audio).unwrap(), 0.0);
        let lp = intrinsic_eval(&IdealLowpass { rate: 24_000, cutoff_hz: 100.0 }, "lp", "x", &[clip]).unwrap();
        assert!(lp.snr_db < 10.0 && lp.mel_distance > 0.0);
        let rs = [r.clone(), lp];
        let t = IntrinsicReport::to_table(&rs, "h");
        assert_eq!(IntrinsicReport::from_table(&ReportTable::parse(&t.render().unwrap()).unwrap()).unwrap(), rs);
    }
}
