"""Sorting of rs-fMRI independent components into Noise / RSN / SOZ classes.

Subpackages:
    cohort    -- domain types, synthetic cohort generator, on-disk format
    spatial   -- DBSCAN cluster counting, contour geometry, overlap features
    temporal  -- undecimated wavelet + sine-dictionary sparsity features
    network   -- from-scratch convolutional noise filter (step 1)
    classify  -- SMOTE, linear SVM with Platt posteriors, LS-SVM baseline (step 2)
    pipeline  -- label fusion and leave-one-patient-out cross-validation (step 3)
    evaluate  -- patient-level / IC-level metrics, ROC assembly, reports
    service   -- HTTP review API for the expert sorting step
    cli       -- command-line entry point
"""

__version__ = "0.1.0"
