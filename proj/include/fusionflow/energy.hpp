#pragma once

// Synaptic-operation counting and the AC/MAC energy model.
//
// Spiking layer: M input activations per step, C = k^2 * C_out connections fanned out
// per input, F = nonzero inputs / (M * N), ops = N * M * C * F (= nonzero inputs * C).
// Analog layer: one MAC per connection per output element.
// Bias additions and batch-norm arithmetic are not counted.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fusionflow/autodiff.hpp"
#include "fusionflow/error.hpp"
#include "fusionflow/network.hpp"

namespace fusionflow {

inline constexpr double kDefaultEMac = 4.6e-12;  // J per multiply-accumulate
inline constexpr double kDefaultEAc = 0.9e-12;   // J per accumulate

struct LayerRecord {
  std::string name;
  bool snn = false;
  double M = 0.0;  // input activations per step (snn) or output elements (ann)
  double C = 0.0;  // fan-out per input (snn) or fan-in per output (ann)
  double F = std::numeric_limits<double>::quiet_NaN();  // snn only
  double N = 1.0;
  double ops = 0.0;
};

struct OpsReport {
  std::vector<LayerRecord> layers;
  double ops_snn = 0.0;
  double ops_ann = 0.0;

  /// Spike-weighted mean activity over all spiking layers: sum(nonzero) / sum(M * N).
  double global_activity() const {
    double spikes = 0, slots = 0;
    for (const auto& l : layers)
      if (l.snn) {
        spikes += l.F * l.M * l.N;
        slots += l.M * l.N;
      }
    return slots > 0 ? spikes / slots : 0.0;
  }

  /// Unweighted mean of the per-layer activity values.
  double mean_layer_activity() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& l : layers)
      if (l.snn) {
        s += l.F;
        ++n;
      }
    return n ? s / double(n) : 0.0;
  }
};

inline void recompute_totals(OpsReport& r) {
  r.ops_snn = r.ops_ann = 0.0;
  for (const auto& l : r.layers) (l.snn ? r.ops_snn : r.ops_ann) += l.ops;
}

inline OpsReport report_from_counters(const OpsCounter& counter) {
  OpsReport r;
  for (const LayerOps& l : counter.layers()) {
    LayerRecord rec;
    rec.name = l.name;
    rec.snn = l.spiking;
    if (l.spiking) {
      rec.M = double(l.input_count);
      rec.C = double(l.kernel * l.kernel * l.cout);
      rec.N = double(l.steps);
      rec.F = l.input_count && l.steps ? double(l.nonzero_inputs) / (rec.M * rec.N) : 0.0;
      rec.ops = double(l.nonzero_inputs) * rec.C;
    } else {
      rec.C = double(l.cin * l.kernel * l.kernel);
      rec.M = double(l.macs) / rec.C;
      rec.ops = double(l.macs);
    }
    r.layers.push_back(rec);
  }
  recompute_totals(r);
  return r;
}

/// One instrumented inference pass. The model must be in eval mode.
template <typename T>
OpsReport profile(Model<T>& model, const Tensor<T>& volume, const Tensor<T>& frames,
                  MultiScaleFlow<T>* outputs = nullptr, Tape<T>* tape = nullptr) {
  if (model.mode() != Mode::eval) throw InvalidState("profile: model is in training mode; switch to eval first");
  OpsCounter counter;
  Tape<T> local(false);
  Tape<T>& tp = tape ? *tape : local;
  MultiScaleFlow<T> out = forward(tp, model, volume, frames, &counter);
  if (outputs) *outputs = out;
  return report_from_counters(counter);
}

/// Mean over several reports of the same model: per-layer F averaged, ops recomputed
/// from the mean F for spiking layers and averaged for analog layers.
inline OpsReport average_reports(const std::vector<OpsReport>& reports) {
  if (reports.empty()) throw InvalidInput("average_reports: no reports");
  OpsReport out = reports.front();
  const double n = double(reports.size());
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    double f = 0, ops = 0;
    for (const auto& r : reports) {
      if (r.layers.size() != out.layers.size() || r.layers[i].name != out.layers[i].name)
        throw InvalidInput("average_reports: reports describe different models");
      f += r.layers[i].snn ? r.layers[i].F : 0.0;
      ops += r.layers[i].ops;
    }
    LayerRecord& l = out.layers[i];
    if (l.snn) {
      l.F = f / n;
      l.ops = l.N * l.M * l.C * l.F;
    } else {
      l.ops = ops / n;
    }
  }
  recompute_totals(out);
  return out;
}

struct EnergyReport {
  std::string label;
  double ops_snn = 0.0;
  double ops_ann = 0.0;
  double e_mac = kDefaultEMac;
  double e_ac = kDefaultEAc;
  double e_total = 0.0;  // joules
  double improvement = 1.0;
};

inline EnergyReport energy(double ops_snn, double ops_ann, double e_mac = kDefaultEMac, double e_ac = kDefaultEAc,
                           std::string label = {}) {
  if (!(ops_snn >= 0.0) || !(ops_ann >= 0.0)) throw InvalidInput("energy: operation counts must be >= 0");
  if (!(e_mac >= 0.0) || !(e_ac >= 0.0)) throw InvalidInput("energy: per-operation energies must be >= 0");
  return EnergyReport{std::move(label), ops_snn, ops_ann, e_mac, e_ac, ops_snn * e_ac + ops_ann * e_mac, 1.0};
}

inline EnergyReport energy(const OpsReport& r, double e_mac = kDefaultEMac, double e_ac = kDefaultEAc,
                           std::string label = {}) {
  return energy(r.ops_snn, r.ops_ann, e_mac, e_ac, std::move(label));
}

/// Sets improvement = baseline e_total / e_total on every report.
inline std::vector<EnergyReport> compare(std::vector<EnergyReport> reports, std::size_t baseline) {
  if (baseline >= reports.size()) throw InvalidInput("compare: baseline index out of range");
  const double base = reports[baseline].e_total;
  for (auto& r : reports) r.improvement = r.e_total > 0 ? base / r.e_total : std::numeric_limits<double>::infinity();
  return reports;
}

inline void write_comparison_text(std::ostream& os, const std::vector<EnergyReport>& rows,
                                  const std::vector<std::size_t>& params = {}) {
  os << std::left << std::setw(24) << "model" << std::right;
  if (!params.empty()) os << std::setw(12) << "params(M)";
  os << std::setw(14) << "MAC" << std::setw(14) << "AC" << std::setw(12) << "E (mJ)" << std::setw(12) << "improve"
     << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << std::left << std::setw(24) << r.label << std::right;
    if (!params.empty()) os << std::setw(12) << std::fixed << std::setprecision(3) << double(params[i]) / 1e6;
    os << std::setw(14) << std::scientific << std::setprecision(3) << r.ops_ann << std::setw(14) << r.ops_snn
       << std::setw(12) << std::fixed << std::setprecision(3) << r.e_total * 1e3 << std::setw(11)
       << std::setprecision(2) << r.improvement << "x\n";
  }
  os << std::defaultfloat;
}

inline void write_comparison_csv(std::ostream& os, const std::vector<EnergyReport>& rows) {
  os << "model,ops_ann,ops_snn,e_mac,e_ac,e_total_mj,improvement\n";
  os << std::setprecision(10);
  for (const auto& r : rows)
    os << r.label << ',' << r.ops_ann << ',' << r.ops_snn << ',' << r.e_mac << ',' << r.e_ac << ',' << r.e_total * 1e3
       << ',' << r.improvement << '\n';
  os << std::defaultfloat;
}

/// Per-layer CSV followed by summary rows.
inline void write_ops_csv(std::ostream& os, const OpsReport& r, const EnergyReport& e) {
  os << std::setprecision(12);
  os << "layer,role,M,C,F,N,ops\n";
  for (const auto& l : r.layers) {
    os << l.name << ',' << (l.snn ? "snn" : "ann") << ',' << l.M << ',' << l.C << ',';
    if (l.snn) os << l.F;
    os << ',' << l.N << ',' << l.ops << '\n';
  }
  os << "total_snn,snn,,,," << ',' << r.ops_snn << '\n';
  os << "total_ann,ann,,,," << ',' << r.ops_ann << '\n';
  os << "activity_global,snn,,," << r.global_activity() << ",,\n";
  os << "activity_layer_mean,snn,,," << r.mean_layer_activity() << ",,\n";
  os << "e_total_j,,,,,," << e.e_total << '\n';
  os << "# ops exclude bias additions and batch-norm arithmetic; e_mac=" << e.e_mac << " J, e_ac=" << e.e_ac
     << " J\n";
  os << std::defaultfloat;
}

inline void write_ops_text(std::ostream& os, const OpsReport& r, const EnergyReport& e) {
  os << std::left << std::setw(12) << "layer" << std::setw(5) << "role" << std::right << std::setw(12) << "M"
     << std::setw(8) << "C" << std::setw(10) << "F" << std::setw(5) << "N" << std::setw(14) << "ops" << '\n';
  for (const auto& l : r.layers) {
    os << std::left << std::setw(12) << l.name << std::setw(5) << (l.snn ? "snn" : "ann") << std::right
       << std::setw(12) << std::setprecision(0) << std::fixed << l.M << std::setw(8) << l.C;
    if (l.snn)
      os << std::setw(10) << std::setprecision(5) << l.F;
    else
      os << std::setw(10) << "-";
    os << std::setw(5) << std::setprecision(0) << l.N << std::setw(14) << std::scientific << std::setprecision(4)
       << l.ops << '\n';
  }
  os << std::scientific << std::setprecision(4) << "ops_snn (AC)  " << r.ops_snn << "\nops_ann (MAC) " << r.ops_ann
     << '\n'
     << std::fixed << std::setprecision(4) << "spiking activity: global " << r.global_activity() * 100
     << " %, layer mean " << r.mean_layer_activity() * 100 << " %\n"
     << "energy " << e.e_total * 1e3 << " mJ (e_mac " << std::scientific << std::setprecision(2) << e.e_mac
     << " J, e_ac " << e.e_ac << " J)\n"
     << "bias additions and batch-norm arithmetic are excluded\n";
  os << std::defaultfloat;
}

}  // namespace fusionflow
