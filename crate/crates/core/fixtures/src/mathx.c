/* Integer and numeric routines for the corpus fixtures. */
typedef unsigned int u32;
typedef unsigned long long u64;
typedef int i32;

#define LIMBS 8

void big_add(u32 *r, const u32 *a, const u32 *b) {
    u64 carry = 0;
    for (int i = 0; i < LIMBS; i++) {
        u64 s = (u64)a[i] + b[i] + carry;
        r[i] = (u32)s;
        carry = s >> 32;
    }
}

int big_sub(u32 *r, const u32 *a, const u32 *b) {
    long long borrow = 0;
    for (int i = 0; i < LIMBS; i++) {
        long long d = (long long)a[i] - b[i] - borrow;
        borrow = d < 0;
        r[i] = (u32)d;
    }
    return (int)borrow;
}

void big_mul(u32 *r, const u32 *a, const u32 *b) {
    u32 t[2 * LIMBS] = {0};
    for (int i = 0; i < LIMBS; i++) {
        u64 carry = 0;
        for (int j = 0; j < LIMBS; j++) {
            u64 cur = (u64)a[i] * b[j] + t[i + j] + carry;
            t[i + j] = (u32)cur;
            carry = cur >> 32;
        }
        t[i + LIMBS] = (u32)carry;
    }
    for (int i = 0; i < LIMBS; i++) r[i] = t[i];
}

int big_cmp(const u32 *a, const u32 *b) {
    for (int i = LIMBS - 1; i >= 0; i--)
        if (a[i] != b[i]) return a[i] < b[i] ? -1 : 1;
    return 0;
}

void big_shl1(u32 *a) {
    u32 carry = 0;
    for (int i = 0; i < LIMBS; i++) {
        u32 next = a[i] >> 31;
        a[i] = (a[i] << 1) | carry;
        carry = next;
    }
}

u32 isqrt(u32 n) {
    u32 x = n, y = (x + 1) / 2;
    while (y < x) { x = y; y = (x + n / x) / 2; }
    return x;
}

i32 fx_mul(i32 a, i32 b) { return (i32)(((long long)a * b) >> 16); }
i32 fx_div(i32 a, i32 b) { return (i32)(((long long)a << 16) / b); }

i32 fx_sin(i32 x) {
    /* Taylor series in 16.16 fixed point. */
    i32 x2 = fx_mul(x, x);
    i32 term = x, sum = x;
    for (int k = 1; k < 6; k++) {
        term = fx_mul(term, x2) / ((2 * k) * (2 * k + 1));
        sum += (k & 1) ? -term : term;
    }
    return sum;
}

int sieve(unsigned char *composite, int n, int *primes) {
    int count = 0;
    for (int i = 2; i < n; i++) {
        if (composite[i]) continue;
        primes[count++] = i;
        for (long j = (long)i * i; j < n; j += i) composite[j] = 1;
    }
    return count;
}

void mat3_mul(const double *a, const double *b, double *c) {
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) {
            double s = 0;
            for (int k = 0; k < 3; k++) s += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = s;
        }
}

double det3(const double *m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

int gauss_solve(double *a, double *b, int n) {
    for (int col = 0; col < n; col++) {
        int piv = col;
        for (int r = col + 1; r < n; r++)
            if ((a[r * n + col] < 0 ? -a[r * n + col] : a[r * n + col]) > (a[piv * n + col] < 0 ? -a[piv * n + col] : a[piv * n + col])) piv = r;
        if (a[piv * n + col] == 0) return -1;
        if (piv != col) {
            for (int k = 0; k < n; k++) { double t = a[col * n + k]; a[col * n + k] = a[piv * n + k]; a[piv * n + k] = t; }
            double t = b[col]; b[col] = b[piv]; b[piv] = t;
        }
        for (int r = col + 1; r < n; r++) {
            double f = a[r * n + col] / a[col * n + col];
            for (int k = col; k < n; k++) a[r * n + k] -= f * a[col * n + k];
            b[r] -= f * b[col];
        }
    }
    for (int r = n - 1; r >= 0; r--) {
        double s = b[r];
        for (int k = r + 1; k < n; k++) s -= a[r * n + k] * b[k];
        b[r] = s / a[r * n + r];
    }
    return 0;
}

u64 xorshift64(u64 *s) { u64 x = *s; x ^= x << 13; x ^= x >> 7; x ^= x << 17; return *s = x; }

u32 lcg_next(u32 *s) { return *s = *s * 1103515245u + 12345u; }

int collatz_len(u64 n) { int k = 0; while (n != 1) { n = n & 1 ? 3 * n + 1 : n / 2; k++; } return k; }

u32 bit_reverse(u32 x) {
    x = ((x >> 1) & 0x55555555u) | ((x & 0x55555555u) << 1);
    x = ((x >> 2) & 0x33333333u) | ((x & 0x33333333u) << 2);
    x = ((x >> 4) & 0x0F0F0F0Fu) | ((x & 0x0F0F0F0Fu) << 4);
    x = ((x >> 8) & 0x00FF00FFu) | ((x & 0x00FF00FFu) << 8);
    return (x >> 16) | (x << 16);
}

int clz32(u32 x) { int n = 0; if (!x) return 32; while (!(x & 0x80000000u)) { x <<= 1; n++; } return n; }

double mean_var(const double *x, int n, double *var) {
    double m = 0, s = 0;
    for (int i = 0; i < n; i++) m += x[i];
    m /= n;
    for (int i = 0; i < n; i++) s += (x[i] - m) * (x[i] - m);
    *var = s / n;
    return m;
}

long long ipow(long long b, int e) { long long r = 1; while (e) { if (e & 1) r *= b; b *= b; e >>= 1; } return r; }

int digits_sum(u32 n) { int s = 0; while (n) { s += n % 10; n /= 10; } return s; }

void fft_bitrev(double *re, double *im, int n) {
    for (int i = 1, j = 0; i < n; i++) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) { double t = re[i]; re[i] = re[j]; re[j] = t; t = im[i]; im[i] = im[j]; im[j] = t; }
    }
}
