#include "trimllm/costmodel.hpp"

#include <fstream>
#include <iomanip>
#include <string>

#include "trimllm/errors.hpp"

namespace trimllm {

void CostParams::validate() const {
  if (!(c > 0.0)) throw DomainError("cost model: c must be positive");
  if (n_layers == 0) throw DomainError("cost model: N must be positive");
  if (n_drop > n_layers) {
    throw DomainError("cost model: cannot drop " + std::to_string(n_drop) + " of " +
                      std::to_string(n_layers) + " layers");
  }
  if (!(sparse_factor > 0.0)) throw DomainError("cost model: sparse_factor must be positive");
}

double t_full(const CostParams& p) {
  p.validate();
  return p.c * double(p.n_layers) * double(p.n_epochs);
}

double t_drop1(const CostParams& p) {
  p.validate();
  if (p.n_drop < 1) throw DomainError("t_drop1: n_d must be at least 1");
  const double nd = double(p.n_drop);
  return p.c * nd * (double(p.n_layers) - (nd - 1.0) / 2.0);
}

double t_drop2(const CostParams& p) {
  p.validate();
  if (p.n_drop < 2 || p.n_drop % 2 != 0) {
    throw DomainError("t_drop2: n_d must be even and at least 2, got " + std::to_string(p.n_drop));
  }
  const double half = double(p.n_drop) / 2.0;
  return p.c * half * (double(p.n_layers) - half + 1.0);
}

double t_sparse(double base, const CostParams& p) {
  if (base < 0.0) throw DomainError("t_sparse: base time must be non-negative");
  if (!(p.sparse_factor > 0.0)) throw DomainError("t_sparse: sparse_factor must be positive");
  return p.sparse_factor * base;
}

double fit_sparse_factor(double sparse_epoch_seconds, double full_epoch_seconds) {
  if (!(full_epoch_seconds > 0.0) || sparse_epoch_seconds < 0.0) {
    throw DomainError("fit_sparse_factor: epoch times must be positive");
  }
  return sparse_epoch_seconds / full_epoch_seconds;
}

double estimate_unit_cost(double epoch_seconds, std::size_t n_layers) {
  if (n_layers == 0 || !(epoch_seconds > 0.0)) {
    throw DomainError("estimate_unit_cost: need a positive epoch time and layer count");
  }
  return epoch_seconds / double(n_layers);
}

std::vector<CostRow> cost_table(const CostParams& p, const std::vector<double>& measured) {
  p.validate();
  std::vector<CostRow> rows;
  for (std::size_t nd = 1; nd <= p.n_layers; ++nd) {
    CostParams q = p;
    q.n_drop = nd;
    CostRow r;
    r.n_drop = nd;
    r.t_full = t_full(q);
    r.t_drop1 = t_drop1(q);
    r.t_sparse_drop1 = t_sparse(r.t_drop1, q);
    if (nd % 2 == 0) {
      r.t_drop2 = t_drop2(q);
      r.t_sparse_drop2 = t_sparse(*r.t_drop2, q);
    }
    if (nd - 1 < measured.size()) r.measured = measured[nd - 1];
    rows.push_back(r);
  }
  return rows;
}

void write_cost_csv(const std::filesystem::path& path, const std::vector<CostRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << "n_d,t_full,t_drop1,t_drop2,t_sparse_drop1,t_sparse_drop2,measured\n";
  for (const CostRow& r : rows) {
    out << r.n_drop << ',' << r.t_full << ',' << r.t_drop1 << ',';
    opt(r.t_drop2);
    out << ',' << r.t_sparse_drop1 << ',';
    opt(r.t_sparse_drop2);
    out << ',';
    opt(r.measured);
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

}  // namespace trimllm
