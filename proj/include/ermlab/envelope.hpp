#pragma once

#include <vector>

namespace ermlab {

/// c * delta^gamma * (log(scale / delta))^q. With q = 0 this is a pure power law.
struct PowerLogTerm {
  double coeff = 1.0;
  double gamma = 1.0;
  double log_power = 0.0;
  double log_scale = 1.0;

  double operator()(double delta) const;
};

/// c * delta * sqrt(log(1 + M / delta)): the extra term picked up by star hulls.
struct StarHullTerm {
  double coeff = 1.0;
  double sup_bound = 1.0;

  double operator()(double delta) const;
};

/// Nonnegative, nondecreasing envelope phi(delta) with phi(delta)/delta
/// nonincreasing on (0, 1]. Sums of terms of the two shapes above; the first
/// power term is the "leading" one reported through the accessors.
class Envelope {
 public:
  Envelope() = default;
  explicit Envelope(PowerLogTerm leading);

  static Envelope power_law(double coeff, double gamma);

  double operator()(double delta) const;

  const std::vector<PowerLogTerm>& power_terms() const { return power_terms_; }
  const std::vector<StarHullTerm>& star_terms() const { return star_terms_; }

  double coeff_c() const;
  double exponent_gamma() const;
  double log_power_q() const;
  bool additive_log_term() const { return !star_terms_.empty(); }

  /// Single power term with no log factor and no star-hull term.
  bool is_pure_power() const;

  Envelope& add(const PowerLogTerm& term);
  Envelope& add(const StarHullTerm& term);

 private:
  std::vector<PowerLogTerm> power_terms_;
  std::vector<StarHullTerm> star_terms_;
};

/// Throws InvalidArgument unless every term keeps the envelope laws on (0, 1]
/// (gamma in [0, 1], q >= 0, gamma * log(scale) >= q).
void validate_envelope(const Envelope& env);

}  // namespace ermlab
