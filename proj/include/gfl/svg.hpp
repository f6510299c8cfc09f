// Minimal SVG plots: polylines, markers, rectangles on a linear or log-log frame.
#pragma once
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace gfl {

using XY = std::pair<double, double>;

class SvgPlot {
public:
    SvgPlot(double x0, double x1, double y0, double y1, bool logxy = false, int size = 600)
        : logxy_(logxy), size_(size) {
        x0_ = tx(x0);
        x1_ = tx(x1);
        y0_ = tx(y0);
        y1_ = tx(y1);
        body_.precision(6);
    }

    void title(const std::string& t) { title_ = t; }
    void labels(const std::string& x, const std::string& y) {
        xlabel_ = x;
        ylabel_ = y;
    }

    void polyline(const std::vector<XY>& pts, const std::string& color, double width = 1.0) {
        if (pts.size() < 2) return;
        body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
        for (const auto& p : pts) body_ << px(p.first) << ',' << py(p.second) << ' ';
        body_ << "\"/>\n";
    }

    void points(const std::vector<XY>& pts, const std::string& color, double r = 2.0) {
        for (const auto& p : pts)
            body_ << "<circle cx=\"" << px(p.first) << "\" cy=\"" << py(p.second) << "\" r=\"" << r
                  << "\" fill=\"" << color << "\"/>\n";
    }

    void rect(double xa, double ya, double xb, double yb, const std::string& stroke, const std::string& fill = "none") {
        const double X0 = px(xa), X1 = px(xb), Y0 = py(yb), Y1 = py(ya);
        body_ << "<rect x=\"" << std::min(X0, X1) << "\" y=\"" << std::min(Y0, Y1) << "\" width=\""
              << std::abs(X1 - X0) << "\" height=\"" << std::abs(Y1 - Y0) << "\" fill=\"" << fill
              << "\" stroke=\"" << stroke << "\" stroke-width=\"0.5\"/>\n";
    }

    std::string str() const {
        const int full = size_ + 2 * kMargin;
        std::ostringstream os;
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << full << "\" height=\"" << full
           << "\" viewBox=\"0 0 " << full << ' ' << full << "\">\n";
        os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << size_ << "\" height=\"" << size_
           << "\" fill=\"none\" stroke=\"black\"/>\n";
        auto label = [&](double x, double y, const std::string& s, const char* anchor) {
            os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\""
               << anchor << "\">" << escape(s) << "</text>\n";
        };
        if (!title_.empty()) label(kMargin + size_ / 2.0, kMargin / 2.0, title_, "middle");
        label(kMargin + size_ / 2.0, full - 12, xlabel_, "middle");
        label(12, kMargin + size_ / 2.0, ylabel_, "start");
        auto num = [&](double v) {
            std::ostringstream s;
            s.precision(3);
            s << (logxy_ ? std::pow(10.0, v) : v);
            return s.str();
        };
        label(kMargin, kMargin + size_ + 16, num(x0_), "start");
        label(kMargin + size_, kMargin + size_ + 16, num(x1_), "end");
        label(kMargin - 4, kMargin + size_, num(y0_), "end");
        label(kMargin - 4, kMargin + 10, num(y1_), "end");
        os << "<clipPath id=\"frame\"><rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << size_
           << "\" height=\"" << size_ << "\"/></clipPath>\n";
        os << "<g clip-path=\"url(#frame)\">\n" << body_.str() << "</g>\n</svg>\n";
        return os.str();
    }

private:
    static constexpr int kMargin = 50;

    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            if (c == '<') out += "&lt;";
            else if (c == '>') out += "&gt;";
            else if (c == '&') out += "&amp;";
            else out += c;
        }
        return out;
    }
    double tx(double v) const { return logxy_ ? std::log10(v) : v; }
    double px(double x) const { return kMargin + (tx(x) - x0_) / (x1_ - x0_) * size_; }
    double py(double y) const { return kMargin + size_ - (tx(y) - y0_) / (y1_ - y0_) * size_; }

    bool logxy_;
    int size_;
    double x0_, x1_, y0_, y1_;
    std::string title_, xlabel_, ylabel_;
    std::ostringstream body_;
};

}  // namespace gfl
