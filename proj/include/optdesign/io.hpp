#pragma once

// Line-oriented text formats for models, parameters, candidate points,
// grids, designs, and run records, plus a CSV reader for prior samples.
// A file is a sequence of sections: [model] and [theta] hold key = value
// lines, [points], [grid], [design approx] and [design exact] hold bare
// numeric rows, and [result] holds free-form key = value pairs emitted
// with run output. Comments start with '#' and run to end of line.
// Numbers are written with 17 significant digits so that every emitted
// file re-parses to bit-identical values.

#include <optdesign/optimize.hpp>

#include <Eigen/Dense>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace optdesign {

// Parse failure at a 1-based line and column of a named input.
struct ParseError : Error {
  ParseError(const std::string& name, int line_, int column_, const std::string& message)
      : Error(name + ":" + std::to_string(line_) + ":" + std::to_string(column_) +
              ": " + message),
        line(line_),
        column(column_) {}
  int line;
  int column;
};

// Everything a single input file can carry. Sections are optional and may
// appear in any order; consumers ask for the pieces they need.
struct InputFile {
  std::optional<ModelSpec> model;
  std::optional<ParameterVector> theta;
  std::vector<Eigen::VectorXd> points;
  std::vector<GridAxis> grid;
  std::optional<DesignApprox> design_approx;
  std::optional<DesignExact> design_exact;
  std::vector<std::pair<std::string, std::string>> result;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Tracks a position inside one line so errors can point at the offending
// column of the named input.
struct LineCursor {
  const std::string& name;
  int line_no;
  std::string_view text;  // full line, already stripped of comments
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& message, std::size_t at) const {
    throw ParseError(name, line_no, static_cast<int>(at) + 1, message);
  }
  [[noreturn]] void fail(const std::string& message) const { fail(message, pos); }

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  [[nodiscard]] bool at_end() {
    skip_space();
    return pos >= text.size();
  }
  [[nodiscard]] bool consume(char c) {
    skip_space();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  [[nodiscard]] double number() {
    skip_space();
    double value = 0.0;
    const char* begin = text.data() + pos;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) fail("expected a number");
    pos = static_cast<std::size_t>(ptr - text.data());
    return value;
  }

  [[nodiscard]] long integer() {
    skip_space();
    long value = 0;
    const char* begin = text.data() + pos;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) fail("expected an integer");
    if (ptr != end && !std::isspace(static_cast<unsigned char>(*ptr)) && *ptr != ')' &&
        *ptr != ',')
      fail("expected an integer", static_cast<std::size_t>(ptr - text.data()));
    pos = static_cast<std::size_t>(ptr - text.data());
    return value;
  }

  [[nodiscard]] std::string word() {
    skip_space();
    const std::size_t start = pos;
    const auto structural = [](char c) {
      return c == '=' || c == '[' || c == ']' || c == '(' || c == ')' || c == ',';
    };
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           !structural(text[pos]))
      ++pos;
    if (pos == start) fail("expected a word");
    return std::string(text.substr(start, pos - start));
  }
};

// Splits "key = value" and returns the key; the cursor is left after '='.
[[nodiscard]] inline std::string key_of(LineCursor& cur) {
  const std::string key = cur.word();
  if (!cur.consume('=')) cur.fail("expected '=' after '" + key + "'");
  return key;
}

// Reads the exponent tuples of one predictor block: (e1,...,ed) groups
// separated by whitespace, possibly none.
[[nodiscard]] inline PredictorSpec predictor_terms(LineCursor& cur, int d) {
  PredictorSpec spec;
  while (!cur.at_end()) {
    if (!cur.consume('(')) cur.fail("expected '(' opening an exponent tuple");
    std::vector<int> term;
    if (!cur.consume(')')) {
      while (true) {
        term.push_back(static_cast<int>(cur.integer()));
        if (cur.consume(')')) break;
        if (!cur.consume(',')) cur.fail("expected ',' or ')' in exponent tuple");
      }
    }
    if (static_cast<int>(term.size()) != d)
      cur.fail("exponent tuple has " + std::to_string(term.size()) + " entries, expected " +
               std::to_string(d));
    spec.terms.push_back(std::move(term));
  }
  return spec;
}

// In-progress [model] section; assembled and validated when it closes.
struct ModelDraft {
  int header_line = 0;
  std::optional<LinkKind> link;
  std::optional<int> J;
  std::optional<int> d;
  std::vector<std::pair<int, PredictorSpec>> category;  // 1-based index, block
  std::optional<PredictorSpec> common;
};

[[nodiscard]] inline ModelSpec finish_model(const std::string& name, const ModelDraft& draft) {
  const auto missing = [&](const char* what) {
    throw ParseError(name, draft.header_line, 1,
                     std::string("[model] section is missing '") + what + "'");
  };
  if (!draft.link) missing("link");
  if (!draft.J) missing("J");
  if (!draft.d) missing("d");
  ModelSpec model;
  model.link = *draft.link;
  model.J = *draft.J;
  model.d = *draft.d;
  model.category.assign(static_cast<std::size_t>(model.J - 1), PredictorSpec{});
  std::vector<bool> seen(static_cast<std::size_t>(model.J - 1), false);
  for (const auto& [index, block] : draft.category) {
    if (index < 1 || index > model.J - 1)
      throw ParseError(name, draft.header_line, 1,
                       "category index " + std::to_string(index) + " outside 1.." +
                           std::to_string(model.J - 1));
    model.category[static_cast<std::size_t>(index - 1)] = block;
    seen[static_cast<std::size_t>(index - 1)] = true;
  }
  for (int j = 0; j < model.J - 1; ++j)
    if (!seen[static_cast<std::size_t>(j)])
      throw ParseError(name, draft.header_line, 1,
                       "[model] section is missing 'category " + std::to_string(j + 1) + "'");
  if (draft.common) model.common = *draft.common;
  try {
    model.validate();
  } catch (const SpecError& e) {
    throw ParseError(name, draft.header_line, 1, e.what());
  }
  return model;
}

// In-progress [theta] section.
struct ThetaDraft {
  int header_line = 0;
  std::vector<std::pair<int, Eigen::VectorXd>> beta;
  std::optional<Eigen::VectorXd> zeta;
};

[[nodiscard]] inline ParameterVector finish_theta(const std::string& name,
                                                  const ThetaDraft& draft) {
  int top = 0;
  for (const auto& [index, block] : draft.beta) top = std::max(top, index);
  ParameterVector theta;
  theta.beta.assign(static_cast<std::size_t>(top), Eigen::VectorXd());
  std::vector<bool> seen(static_cast<std::size_t>(top), false);
  for (const auto& [index, block] : draft.beta) {
    theta.beta[static_cast<std::size_t>(index - 1)] = block;
    seen[static_cast<std::size_t>(index - 1)] = true;
  }
  for (int j = 0; j < top; ++j)
    if (!seen[static_cast<std::size_t>(j)])
      throw ParseError(name, draft.header_line, 1,
                       "[theta] section is missing 'beta " + std::to_string(j + 1) + "'");
  theta.zeta = draft.zeta.value_or(Eigen::VectorXd());
  return theta;
}

[[nodiscard]] inline Eigen::VectorXd number_row(LineCursor& cur) {
  std::vector<double> values;
  while (!cur.at_end()) values.push_back(cur.number());
  Eigen::VectorXd out(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) out(static_cast<Eigen::Index>(i)) = values[i];
  return out;
}

}  // namespace detail

// Parses one input stream. Unknown sections and keys are rejected; numeric
// rows must keep a consistent width, and against a [model] section in the
// same file that width must match the factor dimension d.
[[nodiscard]] inline InputFile parse_input(std::istream& in, const std::string& name) {
  InputFile file;
  detail::ModelDraft model_draft;
  detail::ThetaDraft theta_draft;
  bool saw_model = false;
  bool saw_theta = false;

  enum class Section {
    none,
    model,
    theta,
    points,
    grid,
    design_approx,
    design_exact,
    result
  };
  Section section = Section::none;
  int point_width = -1;  // inferred width of bare numeric rows

  const auto close_drafts = [&]() {
    if (saw_model && !file.model) file.model = detail::finish_model(name, model_draft);
    if (saw_theta && !file.theta) file.theta = detail::finish_theta(name, theta_draft);
  };
  const auto expected_width = [&]() {
    return file.model ? file.model->d : point_width;
  };

  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const std::size_t hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const std::string_view stripped = detail::trim(raw);
    if (stripped.empty()) continue;

    detail::LineCursor cur{name, line_no, raw, 0};

    if (stripped.front() == '[') {
      if (!cur.consume('[')) cur.fail("expected '['");
      const std::string head = cur.word();
      std::string variant;
      if (!cur.consume(']')) {
        variant = cur.word();
        if (!cur.consume(']')) cur.fail("expected ']' closing the section header");
      }
      if (!cur.at_end()) cur.fail("unexpected text after section header");

      close_drafts();
      if (head == "model" && variant.empty()) {
        if (saw_model) cur.fail("duplicate [model] section", 0);
        saw_model = true;
        model_draft.header_line = line_no;
        section = Section::model;
      } else if (head == "theta" && variant.empty()) {
        if (saw_theta) cur.fail("duplicate [theta] section", 0);
        saw_theta = true;
        theta_draft.header_line = line_no;
        section = Section::theta;
      } else if (head == "points" && variant.empty()) {
        section = Section::points;
      } else if (head == "grid" && variant.empty()) {
        section = Section::grid;
      } else if (head == "design" && variant == "approx") {
        if (file.design_approx) cur.fail("duplicate [design approx] section", 0);
        file.design_approx.emplace();
        section = Section::design_approx;
      } else if (head == "design" && variant == "exact") {
        if (file.design_exact) cur.fail("duplicate [design exact] section", 0);
        file.design_exact.emplace();
        section = Section::design_exact;
      } else if (head == "result" && variant.empty()) {
        section = Section::result;
      } else {
        cur.fail("unknown section [" + head + (variant.empty() ? "" : " " + variant) + "]", 0);
      }
      continue;
    }

    switch (section) {
      case Section::none:
        cur.fail("content before any section header", 0);

      case Section::model: {
        const std::string key = cur.word();
        if (key == "category") {
          const int index = static_cast<int>(cur.integer());
          if (!cur.consume('=')) cur.fail("expected '='");
          if (!model_draft.d) cur.fail("'d' must come before predictor blocks");
          model_draft.category.emplace_back(index,
                                            detail::predictor_terms(cur, *model_draft.d));
          break;
        }
        if (!cur.consume('=')) cur.fail("expected '=' after '" + key + "'");
        if (key == "link") {
          const std::string value = cur.word();
          const auto link = link_from_string(value);
          if (!link) cur.fail("unknown link '" + value + "'");
          model_draft.link = *link;
        } else if (key == "J") {
          model_draft.J = static_cast<int>(cur.integer());
        } else if (key == "d") {
          model_draft.d = static_cast<int>(cur.integer());
        } else if (key == "common") {
          if (!model_draft.d) cur.fail("'d' must come before predictor blocks");
          model_draft.common = detail::predictor_terms(cur, *model_draft.d);
        } else {
          cur.fail("unknown [model] key '" + key + "'");
        }
        if (!cur.at_end()) cur.fail("unexpected trailing text");
        break;
      }

      case Section::theta: {
        const std::string key = cur.word();
        if (key == "beta") {
          const int index = static_cast<int>(cur.integer());
          if (!cur.consume('=')) cur.fail("expected '='");
          theta_draft.beta.emplace_back(index, detail::number_row(cur));
        } else if (key == "zeta") {
          if (!cur.consume('=')) cur.fail("expected '='");
          theta_draft.zeta = detail::number_row(cur);
        } else {
          cur.fail("unknown [theta] key '" + key + "'");
        }
        break;
      }

      case Section::points: {
        const Eigen::VectorXd row = detail::number_row(cur);
        const int width = expected_width();
        if (width >= 0 && row.size() != width)
          cur.fail("point has " + std::to_string(row.size()) + " coordinates, expected " +
                       std::to_string(width),
                   0);
        if (point_width < 0) point_width = static_cast<int>(row.size());
        file.points.push_back(row);
        break;
      }

      case Section::grid: {
        GridAxis axis;
        axis.lo = cur.number();
        axis.hi = cur.number();
        axis.step = cur.number();
        if (!cur.at_end()) cur.fail("grid axes are 'lo hi step'");
        if (!(axis.step > 0.0)) cur.fail("grid step must be positive", 0);
        if (!(axis.hi >= axis.lo)) cur.fail("grid upper bound below lower bound", 0);
        file.grid.push_back(axis);
        break;
      }

      case Section::design_approx:
      case Section::design_exact: {
        const bool exact = section == Section::design_exact;
        const Eigen::VectorXd row = detail::number_row(cur);
        if (row.size() < 2) cur.fail("design rows are 'coordinates... value'", 0);
        const Eigen::VectorXd point = row.head(row.size() - 1);
        const int width = expected_width();
        if (width >= 0 && point.size() != width)
          cur.fail("design point has " + std::to_string(point.size()) +
                       " coordinates, expected " + std::to_string(width),
                   0);
        if (point_width < 0) point_width = static_cast<int>(point.size());
        const double value = row(row.size() - 1);
        if (exact) {
          const long count = static_cast<long>(value);
          if (static_cast<double>(count) != value || value < 0)
            cur.fail("exact design counts must be nonnegative integers", 0);
          file.design_exact->points.push_back(point);
          file.design_exact->counts.push_back(count);
        } else {
          if (value < 0) cur.fail("design weights must be nonnegative", 0);
          file.design_approx->points.push_back(point);
          const Eigen::Index k = file.design_approx->weights.size();
          file.design_approx->weights.conservativeResize(k + 1);
          file.design_approx->weights(k) = value;
        }
        break;
      }

      case Section::result: {
        const std::string key = detail::key_of(cur);
        cur.skip_space();
        file.result.emplace_back(key,
                                 std::string(detail::trim(cur.text.substr(cur.pos))));
        break;
      }
    }
  }
  close_drafts();

  // a model arriving after bare numeric rows must still agree on width
  if (file.model && point_width >= 0 && point_width != file.model->d)
    throw ParseError(name, model_draft.header_line, 1,
                     "model dimension d=" + std::to_string(file.model->d) +
                         " disagrees with " + std::to_string(point_width) +
                         "-column rows in the same file");
  if (file.model && file.theta) {
    try {
      file.theta->validate_against(*file.model);
    } catch (const SpecError& e) {
      throw ParseError(name, theta_draft.header_line, 1, e.what());
    }
  }
  return file;
}

// Opens and parses a file, reporting open failures as position 0:0.
[[nodiscard]] inline InputFile parse_input_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  return parse_input(in, path);
}

// ---------------------------------------------------------------------------
// Writers. Doubles carry 17 significant digits so emitted files re-parse to
// bit-identical values.

[[nodiscard]] inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline void write_terms(std::ostream& out, const PredictorSpec& spec) {
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    out << (t == 0 ? "" : " ") << '(';
    for (std::size_t k = 0; k < spec.terms[t].size(); ++k)
      out << (k == 0 ? "" : ",") << spec.terms[t][k];
    out << ')';
  }
}

inline void write_point(std::ostream& out, const Eigen::VectorXd& x) {
  for (Eigen::Index k = 0; k < x.size(); ++k)
    out << (k == 0 ? "" : " ") << format_full(x(k));
}

}  // namespace detail

inline void write_model(std::ostream& out, const ModelSpec& model) {
  out << "[model]\n";
  out << "link = " << to_string(model.link) << "\n";
  out << "J = " << model.J << "\n";
  out << "d = " << model.d << "\n";
  for (std::size_t j = 0; j < model.category.size(); ++j) {
    out << "category " << j + 1 << " = ";
    detail::write_terms(out, model.category[j]);
    out << "\n";
  }
  out << "common = ";
  detail::write_terms(out, model.common);
  out << "\n";
}

inline void write_theta(std::ostream& out, const ParameterVector& theta) {
  out << "[theta]\n";
  for (std::size_t j = 0; j < theta.beta.size(); ++j) {
    out << "beta " << j + 1 << " =";
    for (Eigen::Index k = 0; k < theta.beta[j].size(); ++k)
      out << ' ' << format_full(theta.beta[j](k));
    out << "\n";
  }
  out << "zeta =";
  for (Eigen::Index k = 0; k < theta.zeta.size(); ++k)
    out << ' ' << format_full(theta.zeta(k));
  out << "\n";
}

inline void write_points(std::ostream& out, const std::vector<Eigen::VectorXd>& points) {
  out << "[points]\n";
  for (const auto& x : points) {
    detail::write_point(out, x);
    out << "\n";
  }
}

inline void write_grid(std::ostream& out, const std::vector<GridAxis>& grid) {
  out << "[grid]\n";
  for (const auto& axis : grid)
    out << format_full(axis.lo) << ' ' << format_full(axis.hi) << ' '
        << format_full(axis.step) << "\n";
}

inline void write_design(std::ostream& out, const DesignApprox& design) {
  out << "[design approx]\n";
  for (std::size_t i = 0; i < design.points.size(); ++i) {
    detail::write_point(out, design.points[i]);
    out << ' ' << format_full(design.weights(static_cast<Eigen::Index>(i))) << "\n";
  }
}

inline void write_design(std::ostream& out, const DesignExact& design) {
  out << "[design exact]\n";
  for (std::size_t i = 0; i < design.points.size(); ++i) {
    detail::write_point(out, design.points[i]);
    out << ' ' << design.counts[i] << "\n";
  }
}

inline void write_result(std::ostream& out,
                         const std::vector<std::pair<std::string, std::string>>& fields) {
  out << "[result]\n";
  for (const auto& [key, value] : fields) out << key << " = " << value << "\n";
}

// ---------------------------------------------------------------------------
// Prior samples: CSV with one parameter vector per row. The header names
// the flattened layout beta_<j>_<k> then zeta_<k>; rows with the wrong
// field count or non-finite entries are skipped and counted.

struct PriorFile {
  std::vector<ParameterVector> draws;
  int skipped = 0;
};

namespace detail {

[[nodiscard]] inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(trim(std::string_view(line).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[nodiscard]] inline std::vector<std::string> prior_header(const ModelSpec& model) {
  std::vector<std::string> names;
  for (int j = 0; j < model.J - 1; ++j)
    for (int k = 0; k < model.category_param_count(j); ++k)
      names.push_back("beta_" + std::to_string(j + 1) + "_" + std::to_string(k + 1));
  for (int k = 0; k < model.common_param_count(); ++k)
    names.push_back("zeta_" + std::to_string(k + 1));
  return names;
}

}  // namespace detail

// Reads a prior CSV against the model's parameter layout. The header must
// match the flattened names exactly; malformed rows are skipped, not fatal.
[[nodiscard]] inline PriorFile parse_prior_csv(std::istream& in, const std::string& name,
                                                 const ModelSpec& model) {
  std::string line;
  int line_no = 0;
  do {
    if (!std::getline(in, line)) throw ParseError(name, 1, 1, "missing CSV header");
    ++line_no;
  } while (detail::trim(line).empty());

  const std::vector<std::string> expected = detail::prior_header(model);
  const std::vector<std::string> header = detail::split_csv(line);
  if (header != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i)
      want += (i == 0 ? "" : ",") + expected[i];
    throw ParseError(name, line_no, 1, "CSV header must be exactly '" + want + "'");
  }

  PriorFile sample;
  Eigen::VectorXd flat(static_cast<Eigen::Index>(expected.size()));
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(line);
    if (fields.size() != expected.size()) {
      ++sample.skipped;
      continue;
    }
    bool ok = true;
    for (std::size_t i = 0; i < fields.size() && ok; ++i) {
      double value = 0.0;
      const char* begin = fields[i].data();
      const char* end = begin + fields[i].size();
      const auto [ptr, ec] = std::from_chars(begin, end, value);
      ok = ec == std::errc() && ptr == end && std::isfinite(value);
      flat(static_cast<Eigen::Index>(i)) = value;
    }
    if (!ok) {
      ++sample.skipped;
      continue;
    }
    sample.draws.push_back(ParameterVector::from_flat(model, flat));
  }
  return sample;
}

}  // namespace optdesign
