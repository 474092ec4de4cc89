#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ermlab {

enum class ErrorCode {
  MissingField,
  NonPositiveParameter,
  SparsityExceedsAmbient,
  DimensionMismatch,
  SupBoundViolated,
  UnsupportedNormModeForClass,
  UnsupportedClassKind,
  SolverNonConvergence,
  TooLargeForEnumeration,
  NoCrossingInRange,
  NoCrossing,
  RankDeficient,
  SingularSystem,
  ShapeMismatch,
  QuadratureUnsupportedDimension,
  DegenerateProbe,
  NonPositiveWeight,
  WeightErrorTooLarge,
  MissingNuisanceValue,
  FoldTooSmall,
  InsufficientGrid,
  EmptyBin,
  UnknownSubcommand,
  ConfigParseError,
  NoRecordsFound,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` carries the error kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

enum class NormMode { PopulationL2, EmpiricalL2 };

std::string_view to_string(NormMode mode);
NormMode norm_mode_from_string(std::string_view s);

// Seed derivation -----------------------------------------------------------
//
// Every task seed is splitmix64 applied to a mix of (master, tag, index).
// Tags are small fixed constants per module so that streams never collide.

std::uint64_t splitmix64(std::uint64_t x) noexcept;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) noexcept;

namespace seed_tag {
inline constexpr std::uint64_t kComplexity = 0x436f6d70;  // "Comp"
inline constexpr std::uint64_t kSweep = 0x53776570;       // "Swep"
inline constexpr std::uint64_t kScenario = 0x5363656e;    // "Scen"
inline constexpr std::uint64_t kOracleMc = 0x4f72636c;    // "Orcl"
inline constexpr std::uint64_t kNuisance = 0x4e756973;    // "Nuis"
inline constexpr std::uint64_t kHistogram = 0x48697374;   // "Hist"
inline constexpr std::uint64_t kProbe = 0x50726f62;       // "Prob"
}  // namespace seed_tag

using Rng = std::mt19937_64;

/// Runs fn(i) for i in [0, count) on `jobs` threads. Each index is processed
/// exactly once; callers write into preallocated slots so the result does not
/// depend on scheduling.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

/// Shortest round-trippable decimal form of a double ("%.17g").
std::string format_double(double v);

}  // namespace ermlab
