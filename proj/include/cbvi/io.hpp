#pragma once

// Plain-text file formats: headerless numeric CSV for covariates, one label
// per line for responses, JSON for posteriors and metrics. Every write goes
// to a temporary file first and is renamed into place.

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "cbvi/errors.hpp"
#include "json.hpp"

namespace cbvi::io {

using json = nlohmann::json;

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return ss.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " to " + path.string());
    }
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string> data_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        lines.push_back(line);
    }
    return lines;
}

inline double parse_double(std::string field, const std::string& where) {
    const auto b = field.find_first_not_of(" \t");
    const auto e = field.find_last_not_of(" \t");
    if (b == std::string::npos) throw InvalidData(where + ": empty field");
    field = field.substr(b, e - b + 1);
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw InvalidData(where + ": '" + field + "' is not a number");
    }
    return v;
}

}  // namespace detail

/// Headerless comma-separated matrix; '#' lines and blank lines are ignored.
inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
    const auto lines = detail::data_lines(read_text(path));
    if (lines.empty()) throw InvalidData(path.string() + ": no rows");
    std::vector<std::vector<double>> rows;
    rows.reserve(lines.size());
    for (std::size_t r = 0; r < lines.size(); ++r) {
        std::vector<double> row;
        std::stringstream ss(lines[r]);
        std::string field;
        const std::string where = path.string() + " row " + std::to_string(r + 1);
        while (std::getline(ss, field, ',')) row.push_back(detail::parse_double(field, where));
        if (!lines[r].empty() && lines[r].back() == ',') throw InvalidData(where + ": trailing comma");
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw InvalidData(where + ": expected " + std::to_string(rows.front().size()) + " columns");
        }
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return m;
}

/// One integer label per line.
inline std::vector<int> read_labels_csv(const std::filesystem::path& path) {
    const auto lines = detail::data_lines(read_text(path));
    if (lines.empty()) throw InvalidData(path.string() + ": no labels");
    std::vector<int> y;
    y.reserve(lines.size());
    for (std::size_t r = 0; r < lines.size(); ++r) {
        const std::string& s = lines[r];
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        const std::string field = s.substr(b, e - b + 1);
        int v = 0;
        const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
            throw InvalidLabel(path.string() + " line " + std::to_string(r + 1) + ": '" + field +
                               "' is not an integer label");
        }
        y.push_back(v);
    }
    return y;
}

inline std::string matrix_csv(const Eigen::MatrixXd& m) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    write_text_atomic(path, matrix_csv(m));
}

inline void write_labels_csv(const std::filesystem::path& path, const std::vector<int>& y) {
    std::string out;
    for (int v : y) out += std::to_string(v) + '\n';
    write_text_atomic(path, out);
}

inline json to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

/// Row-major nested arrays.
inline json to_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw InvalidData(what + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw InvalidData(what + ": expected numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw InvalidData(what + ": expected a non-empty array of rows");
    const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Eigen::VectorXd row = vector_from_json(j[r], what);
        if (static_cast<std::size_t>(row.size()) != cols) throw InvalidData(what + ": ragged rows");
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

inline json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidData(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    write_text_atomic(path, j.dump(2) + '\n');
}

}  // namespace cbvi::io
