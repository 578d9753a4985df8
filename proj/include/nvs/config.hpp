#pragma once

// Tolerances and default hyper-parameters shared by the library, tests and CLI.

namespace nvs::tol {

inline constexpr double kGradCheck = 1e-4;         // relative error, double precision
inline constexpr double kRotationOrtho = 1e-6;     // |R^T R - I|
inline constexpr double kUnitDirection = 1e-6;     // | |d| - 1 |
inline constexpr double kWeightPartition = 1e-6;   // sum(w) + T_final = 1
inline constexpr double kBarycentricSum = 1e-9;
inline constexpr double kProjectionRoundTrip = 1e-6;  // pixels
inline constexpr double kIsaReduction = 1e-6;
inline constexpr double kDdimExact = 1e-6;         // zero-noise backend round trip
inline constexpr double kDdimToy = 1e-3;           // toy denoiser round trip, L-inf
inline constexpr double kConsistencyIdentity = 1e-6;
inline constexpr double kAnalyticDepth = 1e-4;
inline constexpr double kWarpDepthRelative = 0.01;  // z-buffer visibility
inline constexpr double kPsnrCapDb = 99.0;
inline constexpr double kPsnrMseFloor = 1e-10;
inline constexpr double kDivergenceLoss = 1e4;

}  // namespace nvs::tol

namespace nvs::defaults {

inline constexpr int kGridH = 16;
inline constexpr int kGridW = 16;
inline constexpr int kHiddenColorDim = 128;
inline constexpr int kCoarseSamples = 64;
inline constexpr int kFineSamples = 96;
inline constexpr int kPatchSize = 16;
inline constexpr double kLambdaGan = 1e-3;
inline constexpr double kLambdaPer = 1e-2;
inline constexpr double kR1Gamma = 10.0;
inline constexpr double kLearningRate = 1e-4;
inline constexpr int kKeyframes = 40;
inline constexpr int kDenoiseSteps = 25;
inline constexpr double kGuidanceScale = 7.5;
inline constexpr int kImageSize = 64;

}  // namespace nvs::defaults
