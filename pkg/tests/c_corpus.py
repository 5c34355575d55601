"""Twenty small C functions covering the control constructs the CFG builder handles."""

IF_ELSE = "int f(int x)\n{\n    if (x) a(); else b();\n    return 0;\n}"

SNIPPETS = [
    "int f(){return 0;}",
    IF_ELSE,
    "void g(int n)\n{\n    int i;\n    for (i = 0; i < n; i++) {\n        work(i);\n    }\n}",
    "int h(char *p)\n{\n    while (*p) {\n        if (*p == 'x')\n            break;\n        p++;\n    }\n    return *p;\n}",
    "int sw(int k)\n{\n    switch (k) {\n    case 1:\n        return 10;\n    case 2:\n        k++;\n    default:\n        k--;\n    }\n    return k;\n}",
    "void dw(int n)\n{\n    do {\n        n--;\n    } while (n > 0);\n}",
    "int nested(int a, int b)\n{\n    if (a) {\n        if (b)\n            return 1;\n        else\n            return 2;\n    }\n    return 3;\n}",
    "void loopc(int n)\n{\n    for (int i = 0; i < n; i++) {\n        if (i % 2)\n            continue;\n        emit(i);\n    }\n}",
    "static int copy(char *dst, const char *src, size_t len)\n{\n    if (!dst || !src)\n        return -1;\n    memcpy(dst, src, len);\n    return 0;\n}",
    "void empty(void)\n{\n}",
    "int lab(int x)\n{\nagain:\n    x--;\n    if (x > 0)\n        goto again;\n    return x;\n}",
    "int *alloc(size_t n)\n{\n    int *p = malloc(n * sizeof(int));\n    if (p == NULL)\n        return NULL;\n    memset(p, 0, n * sizeof(int));\n    return p;\n}",
    "void chain(int x)\n{\n    if (x == 1)\n        one();\n    else if (x == 2)\n        two();\n    else\n        other();\n}",
    "int sum(int *a, int n)\n{\n    int s = 0;\n    /* accumulate */\n    for (int i = 0; i < n; i++)\n        s += a[i];\n    return s;\n}",
    "void inf(void)\n{\n    for (;;) {\n        if (poll())\n            break;\n    }\n    done();\n}",
    "int sw2(int c)\n{\n    switch (c) {\n    case 'a':\n    case 'b':\n        return 1;\n    }\n    return 0;\n}",
    "void deep(int a)\n{\n    while (a) {\n        switch (a) {\n        case 1:\n            a = 0;\n            break;\n        default:\n            a--;\n            continue;\n        }\n    }\n}",
    "char *dup(const char *s)\n{\n    size_t n = strlen(s);\n    char *d = malloc(n + 1);\n    strcpy(d, s);\n    return d;\n}",
    "int ternary(int a, int b)\n{\n    int m = a > b ? a : b;\n    return m;\n}",
    "void multi(struct s *p)\n{\n    p->a = 1;\n    p->b = 2;\n    if (p->c)\n        free(p->c);\n    p->c = NULL;\n}",
]
