use meltstream_core::autograd::suite::{check_all_ops, OPS};

#[test]
fn every_op_passes_finite_differences() {
    let reports = check_all_ops(100, 7, 1e-3).unwrap();
    assert_eq!(reports.len(), OPS.len());
    for r in &reports {
        assert!(r.worst < 1e-4, "{}: worst relative error {:e}", r.op, r.worst);
    }
}
