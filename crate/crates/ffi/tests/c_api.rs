use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use coldloop_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(coldloop_last_error()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut ColdloopLoop {
    let name = CString::new(name).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { coldloop_loop_from_reference(name.as_ptr(), &mut h) }, ColdloopStatus::Ok, "{}", last_error());
    assert!(!h.is_null());
    h
}

#[test]
fn budget_and_occupancy_match_the_library() {
    let h = load("lhe_het");
    let mut b = ColdloopBudget::default();
    assert_eq!(unsafe { coldloop_loop_budget(h, &mut b) }, ColdloopStatus::Ok);
    let sc = coldloop::config::reference("lhe_het").unwrap();
    let expect = coldloop::model::rate_budget(&sc.loop_config).unwrap();
    assert_eq!(b.c0, expect.c0);
    assert_eq!(b.n_th, expect.n_th);
    assert_eq!(b.n_bath, b.n_th + b.n_ba);

    let mut n = 0.0;
    assert_eq!(unsafe { coldloop_loop_phonon_number(h, &mut n) }, ColdloopStatus::Ok);
    let truth = coldloop::model::LoopParams::from_config(&sc.loop_config).phonon_number().unwrap().n_bar;
    assert_eq!(n, truth);
    assert_eq!(last_error(), "");

    let mut buf = [0 as std::ffi::c_char; 4];
    let mut len = 0usize;
    assert_eq!(unsafe { coldloop_loop_name(h, buf.as_mut_ptr(), buf.len(), &mut len) }, ColdloopStatus::Ok);
    assert_eq!(len, "lhe_het".len());
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "lhe");
    unsafe { coldloop_loop_free(h) };
}

#[test]
fn spectra_and_gain_control() {
    let h = load("lhe_het");
    let freqs = [1.0e6, 1.045e6, 1.1e6];
    let mut meas = [0.0; 3];
    let mut disp = [0.0; 3];
    unsafe {
        assert_eq!(coldloop_loop_measured_psd(h, freqs.as_ptr(), 3, meas.as_mut_ptr()), ColdloopStatus::Ok);
        assert_eq!(coldloop_loop_displacement_psd(h, freqs.as_ptr(), 3, disp.as_mut_ptr()), ColdloopStatus::Ok);
    }
    assert!(meas[1] > meas[0] && meas[1] > meas[2]);
    assert!(disp.iter().all(|d| *d > 0.0));

    let (mut g_opt, mut n_min) = (0.0, 0.0);
    unsafe {
        assert_eq!(coldloop_loop_optimize_gain(h, 1e3, 1e7, &mut g_opt, &mut n_min), ColdloopStatus::Ok);
        assert_eq!(coldloop_loop_set_gain(h, g_opt), ColdloopStatus::Ok);
    }
    let mut g = 0.0;
    let mut n = 0.0;
    unsafe {
        assert_eq!(coldloop_loop_gain(h, &mut g), ColdloopStatus::Ok);
        assert_eq!(coldloop_loop_phonon_number(h, &mut n), ColdloopStatus::Ok);
    }
    assert_eq!(g, g_opt);
    assert!((n - n_min).abs() < 1e-9 * n_min);

    // far beyond the gain margin the loop oscillates
    let mut stable = 1;
    unsafe {
        assert_eq!(coldloop_loop_set_gain(h, 1e12), ColdloopStatus::Ok);
        assert_eq!(coldloop_loop_is_stable(h, &mut stable), ColdloopStatus::Ok);
        assert_eq!(stable, 0);
        assert_eq!(coldloop_loop_phonon_number(h, &mut n), ColdloopStatus::Unstable);
        assert_eq!(coldloop_loop_set_gain(h, f64::NAN), ColdloopStatus::InvalidArgument);
        coldloop_loop_free(h);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut h = ptr::null_mut();
    let bad = CString::new("name = \"x\"\n").unwrap();
    assert_eq!(unsafe { coldloop_loop_from_toml(bad.as_ptr(), &mut h) }, ColdloopStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("mode"), "{}", last_error());

    assert_eq!(unsafe { coldloop_loop_from_toml(ptr::null(), &mut h) }, ColdloopStatus::NullPointer);
    assert_eq!(unsafe { coldloop_loop_phonon_number(ptr::null(), ptr::null_mut()) }, ColdloopStatus::NullPointer);

    let mut n = 0.0;
    assert_eq!(unsafe { coldloop_occupancy_from_powers(2.0, 1.0, &mut n) }, ColdloopStatus::Ok);
    assert_eq!(n, 1.0);
    assert_eq!(unsafe { coldloop_occupancy_from_powers(1.0, 1.0, &mut n) }, ColdloopStatus::Numeric);
    assert!(!last_error().is_empty());
    unsafe { coldloop_loop_free(ptr::null_mut()) };
}

#[test]
fn toml_handles_match_reference_text() {
    let (_, text) = coldloop::config::REFERENCE[2];
    let c = CString::new(text).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { coldloop_loop_from_toml(c.as_ptr(), &mut h) }, ColdloopStatus::Ok);
    let r = load("ln2_het");
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        coldloop_loop_gain(h, &mut a);
        coldloop_loop_gain(r, &mut b);
        coldloop_loop_free(h);
        coldloop_loop_free(r);
    }
    assert_eq!(a, b);
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/coldloop.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libcoldloop_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("coldloop_smoke");
    let status = Command::new("cc")
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("c0=1.1"), "{text}");
}
