#include "lavit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lavit/train.hpp"

namespace lavit {

double attention_entropy(const std::vector<double>& dist) {
  double sum = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw ValueError("attention_entropy: negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValueError("attention_entropy: input must sum to 1 within 1e-9");
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double salient_cv(const std::vector<std::vector<double>>& maps, int64_t k_salient) {
  if (maps.size() < 2) throw ValueError("salient_cv: need at least 2 samples");
  std::vector<double> masses;
  masses.reserve(maps.size());
  for (const auto& map : maps) {
    if (k_salient < 1 || k_salient > static_cast<int64_t>(map.size()))
      throw ValueError("salient_cv: k_salient out of range");
    std::vector<double> sorted = map;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double mass = 0.0;
    for (int64_t i = 0; i < k_salient; ++i) mass += sorted[static_cast<size_t>(i)];
    masses.push_back(mass);
  }
  double mean = 0.0;
  for (double m : masses) mean += m;
  mean /= static_cast<double>(masses.size());
  if (mean == 0.0) throw ValueError("salient_cv: zero mean salient mass");
  double var = 0.0;
  for (double m : masses) var += (m - mean) * (m - mean);
  var /= static_cast<double>(masses.size());
  return std::sqrt(var) / mean;
}

double kl_divergence_value(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence_value: length mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) throw ValueError("kl_divergence_value: support violation");
      kl += p[i] * std::log(p[i] / q[i]);
    }
  }
  return kl;
}

namespace {

double cos_distance(const double* a, const double* b, int64_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

GapReport perception_gap_report(const Model& teacher, const Model& student,
                                std::span<const Sample* const> samples, int64_t k_salient) {
  GapReport report;
  report.hidden_defined = teacher.config().d_model == student.config().d_model;
  struct Acc {
    int64_t n = 0;
    double kl = 0.0, cos = 0.0;
  };
  std::map<TokenCategory, Acc> acc;
  std::vector<double> t_entropies, s_entropies;
  std::vector<std::vector<double>> t_maps, s_maps;
  const Vocab& vocab = Vocab::instance();

  for (const Sample* s : samples) {
    GenerateResult dec = teacher.generate(model_inputs(*s));
    if (dec.tokens.empty()) continue;
    ModelInputs forced = model_inputs(*s);
    forced.answer = dec.tokens;
    Tape t1(false), t2(false);
    ForwardOutput t_out = teacher.forward(t1, teacher.params(), forced, {});
    ForwardOutput s_out = student.forward(t2, student.params(), forced, {});

    for (size_t t = 0; t < dec.tokens.size(); ++t) {
      // The token's own query row (BOA occupies the first answer position).
      const int64_t t_row = t_out.layout.answer_begin() + 1 + static_cast<int64_t>(t);
      const int64_t s_row = s_out.layout.answer_begin() + 1 + static_cast<int64_t>(t);
      auto p = gaze_distribution(t_out, {t_row});
      auto q = gaze_distribution(s_out, {s_row});
      if (p.empty() || q.empty()) continue;
      Acc& a = acc[vocab.category(dec.tokens[t])];
      ++a.n;
      a.kl += kl_divergence_value(p, q);
      if (report.hidden_defined) {
        const int64_t d = teacher.config().d_model;
        a.cos += cos_distance(t_out.h_final.data() + t_row * d,
                              s_out.h_final.data() + s_row * d, d);
      }
    }

    auto t_map = gaze_distribution(t_out, t_out.layout.answer_positions());
    auto s_map = gaze_distribution(s_out, s_out.layout.answer_positions());
    if (!t_map.empty() && !s_map.empty()) {
      t_entropies.push_back(attention_entropy(t_map));
      s_entropies.push_back(attention_entropy(s_map));
      t_maps.push_back(std::move(t_map));
      s_maps.push_back(std::move(s_map));
    }
    ++report.n_samples;
  }

  for (const auto& [cat, a] : acc) {
    CategoryGap g;
    g.n_tokens = a.n;
    g.mean_attn_kl = a.kl / static_cast<double>(a.n);
    g.has_hidden = report.hidden_defined;
    g.mean_hidden_cos_dist = report.hidden_defined ? a.cos / static_cast<double>(a.n) : 0.0;
    report.per_category[cat] = g;
  }
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / static_cast<double>(v.size());
  };
  report.teacher_mean_entropy = mean_of(t_entropies);
  report.student_mean_entropy = mean_of(s_entropies);
  if (t_maps.size() >= 2) {
    const int64_t k = std::min<int64_t>(k_salient, static_cast<int64_t>(t_maps[0].size()));
    report.teacher_salient_cv = salient_cv(t_maps, k);
    report.student_salient_cv = salient_cv(s_maps, k);
  }
  return report;
}

FocusCurve focus_curve_from(const std::vector<FocusItem>& items,
                            const std::vector<double>& thresholds) {
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw ValueError("focus_curve_from: thresholds must ascend");
  FocusCurve curve;
  for (const auto& item : items) {
    if (!item.has_focus) continue;
    if (item.correct) {
      curve.mean_focus_correct += item.focus;
      ++curve.n_correct;
    } else {
      curve.mean_focus_incorrect += item.focus;
      ++curve.n_incorrect;
    }
  }
  if (curve.n_correct > 0) curve.mean_focus_correct /= static_cast<double>(curve.n_correct);
  if (curve.n_incorrect > 0) curve.mean_focus_incorrect /= static_cast<double>(curve.n_incorrect);

  for (double tau : thresholds) {
    FocusCurveRow row;
    row.threshold = tau;
    int64_t correct = 0;
    for (const auto& item : items) {
      if (!item.has_focus || item.focus < tau) continue;
      ++row.n_retained;
      if (item.correct) ++correct;
    }
    if (row.n_retained > 0) {
      row.accuracy = static_cast<double>(correct) / static_cast<double>(row.n_retained);
      row.has_accuracy = true;
    }
    curve.rows.push_back(row);
  }
  return curve;
}

FocusCurve accuracy_vs_focus_curve(const Model& model, std::span<const Sample* const> samples,
                                   const std::vector<double>& thresholds) {
  std::vector<FocusItem> items;
  items.reserve(samples.size());
  for (const Sample* s : samples) {
    GenerateResult res = model.generate(model_inputs(*s));
    const bool correct = !res.truncated && res.tokens == s->answer_ids;
    auto gaze = aggregate_gaze(res.out.attn, res.out.attn_dim, res.out.layout.answer_positions(),
                               res.out.layout.image_positions());
    auto traj = minmax_normalize(gaze);
    double total = 0.0;
    for (double v : traj) total += v;
    FocusItem item{0.0, correct, false};
    if (total > 0.0) {
      item.focus = focusing_score(traj, s->scene.grid_rows, s->scene.grid_cols, s->bbox);
      item.has_focus = true;
    }
    items.push_back(item);
  }
  return focus_curve_from(items, thresholds);
}

void write_focus_curve_csv(const FocusCurve& curve, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_focus_curve_csv: cannot open '" + path + "'");
  f << "threshold,n_retained,accuracy\n";
  char buf[128];
  for (const auto& r : curve.rows) {
    if (r.has_accuracy)
      std::snprintf(buf, sizeof buf, "%.17g,%lld,%.17g\n", r.threshold,
                    static_cast<long long>(r.n_retained), r.accuracy);
    else
      std::snprintf(buf, sizeof buf, "%.17g,%lld,\n", r.threshold,
                    static_cast<long long>(r.n_retained));
    f << buf;
  }
}

void write_gap_report_csv(const GapReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_gap_report_csv: cannot open '" + path + "'");
  f << "category,n_tokens,mean_attn_kl,mean_hidden_cos_dist\n";
  char buf[160];
  for (const auto& [cat, g] : report.per_category) {
    if (g.has_hidden)
      std::snprintf(buf, sizeof buf, "%s,%lld,%.17g,%.17g\n", to_string(cat),
                    static_cast<long long>(g.n_tokens), g.mean_attn_kl, g.mean_hidden_cos_dist);
    else
      std::snprintf(buf, sizeof buf, "%s,%lld,%.17g,\n", to_string(cat),
                    static_cast<long long>(g.n_tokens), g.mean_attn_kl);
    f << buf;
  }
  std::snprintf(buf, sizeof buf, "__entropy__,%lld,%.17g,%.17g\n",
                static_cast<long long>(report.n_samples), report.teacher_mean_entropy,
                report.student_mean_entropy);
  f << buf;
  std::snprintf(buf, sizeof buf, "__salient_cv__,%lld,%.17g,%.17g\n",
                static_cast<long long>(report.n_samples), report.teacher_salient_cv,
                report.student_salient_cv);
  f << buf;
}

namespace {

struct SvgCanvas {
  std::ofstream f;
  static constexpr int w = 640, h = 400, pad = 50;

  explicit SvgCanvas(const std::string& path, const std::string& title) : f(path, std::ios::trunc) {
    if (!f) throw IoError("svg: cannot open '" + path + "'");
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" "
         "font-family=\"sans-serif\">"
      << title << "</text>\n";
    f << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\""
      << h - pad << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  }
  double sx(double t) const { return pad + t * (w - 2 * pad); }
  double sy(double t) const { return h - pad - t * (h - 2 * pad); }
  void close() { f << "</svg>\n"; }
};

}  // namespace

void write_histogram_svg(const std::vector<double>& values, int64_t n_bins,
                         const std::string& title, const std::string& path) {
  SvgCanvas svg(path, title);
  if (!values.empty() && n_bins > 0) {
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    const double width = (mx - mn) > 0 ? (mx - mn) : 1.0;
    std::vector<int64_t> bins(static_cast<size_t>(n_bins), 0);
    for (double v : values) {
      int64_t b = static_cast<int64_t>((v - mn) / width * static_cast<double>(n_bins));
      b = std::min<int64_t>(b, n_bins - 1);
      ++bins[static_cast<size_t>(b)];
    }
    const int64_t peak = *std::max_element(bins.begin(), bins.end());
    char buf[256];
    for (int64_t b = 0; b < n_bins; ++b) {
      const double x0 = svg.sx(static_cast<double>(b) / static_cast<double>(n_bins));
      const double x1 = svg.sx(static_cast<double>(b + 1) / static_cast<double>(n_bins));
      const double frac = static_cast<double>(bins[static_cast<size_t>(b)]) /
                          static_cast<double>(std::max<int64_t>(peak, 1));
      const double y = svg.sy(frac);
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#4878cf\" "
                    "stroke=\"white\"/>\n",
                    x0, y, x1 - x0, svg.sy(0.0) - y);
      svg.f << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\" font-family=\"sans-serif\">min %.4g</text>\n",
                  SvgCanvas::pad, SvgCanvas::h - 20, mn);
    svg.f << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" font-size=\"12\" "
                  "font-family=\"sans-serif\">max %.4g</text>\n",
                  SvgCanvas::w - SvgCanvas::pad, SvgCanvas::h - 20, mx);
    svg.f << buf;
  }
  svg.close();
}

void write_curve_svg(const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& title, const std::string& path) {
  if (xs.size() != ys.size()) throw ShapeError("write_curve_svg: x/y length mismatch");
  SvgCanvas svg(path, title);
  if (xs.size() >= 2) {
    const auto [xmn, xmx] = std::minmax_element(xs.begin(), xs.end());
    const auto [ymn, ymx] = std::minmax_element(ys.begin(), ys.end());
    const double xw = (*xmx - *xmn) > 0 ? *xmx - *xmn : 1.0;
    const double yw = (*ymx - *ymn) > 0 ? *ymx - *ymn : 1.0;
    svg.f << "<polyline fill=\"none\" stroke=\"#c44e52\" stroke-width=\"2\" points=\"";
    char buf[64];
    for (size_t i = 0; i < xs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", svg.sx((xs[i] - *xmn) / xw),
                    svg.sy((ys[i] - *ymn) / yw));
      svg.f << buf;
    }
    svg.f << "\"/>\n";
  }
  svg.close();
}

}  // namespace lavit
