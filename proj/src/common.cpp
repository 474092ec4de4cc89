#include "ermlab/common.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include <fmt/format.h>

namespace ermlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::NonPositiveParameter: return "NonPositiveParameter";
    case ErrorCode::SparsityExceedsAmbient: return "SparsityExceedsAmbient";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SupBoundViolated: return "SupBoundViolated";
    case ErrorCode::UnsupportedNormModeForClass: return "UnsupportedNormModeForClass";
    case ErrorCode::UnsupportedClassKind: return "UnsupportedClassKind";
    case ErrorCode::SolverNonConvergence: return "SolverNonConvergence";
    case ErrorCode::TooLargeForEnumeration: return "TooLargeForEnumeration";
    case ErrorCode::NoCrossingInRange: return "NoCrossingInRange";
    case ErrorCode::NoCrossing: return "NoCrossing";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::QuadratureUnsupportedDimension: return "QuadratureUnsupportedDimension";
    case ErrorCode::DegenerateProbe: return "DegenerateProbe";
    case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorCode::WeightErrorTooLarge: return "WeightErrorTooLarge";
    case ErrorCode::MissingNuisanceValue: return "MissingNuisanceValue";
    case ErrorCode::FoldTooSmall: return "FoldTooSmall";
    case ErrorCode::InsufficientGrid: return "InsufficientGrid";
    case ErrorCode::EmptyBin: return "EmptyBin";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::NoRecordsFound: return "NoRecordsFound";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string_view to_string(NormMode mode) {
  return mode == NormMode::PopulationL2 ? "PopulationL2" : "EmpiricalL2";
}

NormMode norm_mode_from_string(std::string_view s) {
  if (s == "PopulationL2") return NormMode::PopulationL2;
  if (s == "EmpiricalL2") return NormMode::EmpiricalL2;
  fail(ErrorCode::InvalidArgument, "unknown norm mode '" + std::string(s) + "'");
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ tag) + index);
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const auto workers = static_cast<std::size_t>(jobs) < count ? static_cast<std::size_t>(jobs) : count;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace ermlab
