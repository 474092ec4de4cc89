#include "ermlab/envelope.hpp"

#include <cmath>

#include "ermlab/common.hpp"

namespace ermlab {

double PowerLogTerm::operator()(double delta) const {
  if (delta <= 0.0 || coeff == 0.0) return 0.0;
  double v = coeff * std::pow(delta, gamma);
  if (log_power != 0.0) v *= std::pow(std::log(log_scale / delta), log_power);
  return v;
}

double StarHullTerm::operator()(double delta) const {
  if (delta <= 0.0 || coeff == 0.0) return 0.0;
  return coeff * delta * std::sqrt(std::log1p(sup_bound / delta));
}

Envelope::Envelope(PowerLogTerm leading) { power_terms_.push_back(leading); }

Envelope Envelope::power_law(double coeff, double gamma) {
  return Envelope(PowerLogTerm{coeff, gamma, 0.0, 1.0});
}

double Envelope::operator()(double delta) const {
  double v = 0.0;
  for (const auto& t : power_terms_) v += t(delta);
  for (const auto& t : star_terms_) v += t(delta);
  return v;
}

double Envelope::coeff_c() const { return power_terms_.empty() ? 0.0 : power_terms_.front().coeff; }
double Envelope::exponent_gamma() const {
  return power_terms_.empty() ? 1.0 : power_terms_.front().gamma;
}
double Envelope::log_power_q() const {
  return power_terms_.empty() ? 0.0 : power_terms_.front().log_power;
}

bool Envelope::is_pure_power() const {
  return power_terms_.size() == 1 && star_terms_.empty() && power_terms_.front().log_power == 0.0;
}

Envelope& Envelope::add(const PowerLogTerm& term) {
  power_terms_.push_back(term);
  return *this;
}

Envelope& Envelope::add(const StarHullTerm& term) {
  star_terms_.push_back(term);
  return *this;
}

void validate_envelope(const Envelope& env) {
  for (const auto& t : env.power_terms()) {
    if (!(t.coeff >= 0.0) || !(t.gamma >= 0.0 && t.gamma <= 1.0) || !(t.log_power >= 0.0))
      fail(ErrorCode::InvalidArgument, "envelope term outside c>=0, gamma in [0,1], q>=0");
    if (t.log_power > 0.0 && !(t.log_scale >= 1.0 && t.gamma * std::log(t.log_scale) >= t.log_power))
      fail(ErrorCode::InvalidArgument, "log factor would break monotonicity on (0,1]");
  }
  for (const auto& t : env.star_terms()) {
    if (!(t.coeff >= 0.0) || !(t.sup_bound > 0.0))
      fail(ErrorCode::InvalidArgument, "star-hull term needs c>=0 and M>0");
  }
}

}  // namespace ermlab
