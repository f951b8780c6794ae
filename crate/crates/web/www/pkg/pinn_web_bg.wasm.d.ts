/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_poissondemo_free: (a: number, b: number) => void;
export const integrate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const poissondemo_iterations: (a: number) => number;
export const poissondemo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const poissondemo_prediction: (a: number, b: number) => [number, number, number, number];
export const poissondemo_rel_error: (a: number, b: number) => [number, number, number];
export const poissondemo_step: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
