use pyo3::prelude::*;
use pyuwrestore::pyuwrestore;

const SCRIPT: &std::ffi::CStr = c"
import pyuwrestore as uw

flat = uw.Image.constant(12, 12, [0.3, 0.6, 0.8])
bl, _ = uw.estimate_bl(flat, 'dcp')
assert [int(v * 255 + 0.5) for v in bl] == [77, 153, 204], bl

img = uw.Image(2, 1, bytes([0, 128, 255, 10, 20, 30]))
assert (img.width, img.height) == (2, 1)
assert img.to_bytes() == bytes([0, 128, 255, 10, 20, 30])
assert repr(img) == 'Image(2x1)'

hazed = uw.synth_haze(flat, [0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
assert all(abs(a - b) < 1e-12 for a, b in zip(hazed.pixel(0, 0), [0.4, 0.55, 0.65]))

for bad in (lambda: uw.Image(2, 2, b'xyz'), lambda: img.pixel(5, 0), lambda: uw.enhance(flat, lambda_v=0.9)):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError('expected ValueError')

try:
    uw.Image.load('/nonexistent/image.png')
except OSError:
    pass
else:
    raise AssertionError('expected OSError')
";

#[test]
fn module_round_trip() {
    pyo3::append_to_inittab!(pyuwrestore);
    Python::initialize();
    Python::attach(|py| py.run(SCRIPT, None, None)).unwrap();
}
