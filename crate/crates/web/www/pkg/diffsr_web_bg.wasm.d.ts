/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const alphaSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const gammaCurve: (a: number, b: number, c: number) => [number, number, number, number];
export const gridOffsets: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const magnify: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const noisedImage: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const normalizePair: (a: number, b: number) => [number, number, number, number];
export const targetSide: (a: number, b: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
